//! Seeded random streams.
//!
//! One root seed feeds a ChaCha8 generator; each consumer gets its own stream
//! id so draws in one stream never shift another. Stream positions can be
//! captured and restored exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Stream ids derived from the root seed.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const INIT: u64 = 4;
    /// Evaluation round `k` uses `EVAL_BASE + k`.
    pub const EVAL_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Exact position of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub key: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &StreamRng) -> Self {
        RngState {
            key: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
