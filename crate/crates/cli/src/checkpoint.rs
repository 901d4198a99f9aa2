//! MEQ1 checkpoint format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MEQ1" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//! u32 net_count, then per network:
//!     u32 layer_count, then per layer: u32 rows | u32 cols | u8 activation |
//!     f64 weights (row-major) | f64 biases
//! per optimized network: u64 step | f64 beta1 | f64 beta2 | f64 eps | m | v
//! SAC only: f64 log_alpha | f64 m | f64 v | u64 step
//! three RNG streams: 32-byte key | u64 stream | u128 word position
//! ```

use std::io::Write;
use std::path::Path;

use meq_core::agent::Agent;
use meq_core::net::{Activation, AdamState, Grads, Layer, LayerGrads, Mlp};
use meq_core::rng::RngState;
use meq_core::sac::{SacAgent, SacConfig, SacNets, ScalarAdam};
use meq_core::td3::{Td3Agent, Td3Config, Td3Nets};
use meq_core::trainer::{ScenarioConfig, Snapshot, TrainerRngs};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MEQ1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "algorithm", content = "settings", rename_all = "lowercase")]
enum AgentSettings {
    Td3(Td3Config),
    Sac(SacConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    scenario: ScenarioConfig,
    agent: AgentSettings,
    update_count: u64,
    env_steps: u64,
    episodes: u64,
    recent_returns: Vec<f64>,
    eval_rounds: u64,
    best_eval_return: Option<f64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn net(&mut self, net: &Mlp) {
        self.u32(net.layers().len() as u32);
        for l in net.layers() {
            self.u32(l.rows as u32);
            self.u32(l.cols as u32);
            self.u8(match l.activation {
                Activation::Identity => 0,
                Activation::LeakyRelu => 1,
                Activation::Tanh => 2,
            });
            self.f64s(&l.weights);
            self.f64s(&l.bias);
        }
    }

    fn grads(&mut self, g: &Grads) {
        for l in &g.layers {
            self.f64s(&l.weights);
            self.f64s(&l.bias);
        }
    }

    fn adam(&mut self, s: &AdamState) {
        self.u64(s.step);
        self.f64s(&[s.beta1, s.beta2, s.eps]);
        self.grads(&s.m);
        self.grads(&s.v);
    }

    fn rng(&mut self, r: &RngState) {
        self.0.extend_from_slice(&r.key);
        self.u64(r.stream);
        self.0.extend_from_slice(&r.word_pos.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or(CheckpointError::Truncated(what))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(what))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn net(&mut self) -> Result<Mlp, CheckpointError> {
        let count = self.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let rows = self.u32("layer rows")? as usize;
            let cols = self.u32("layer cols")? as usize;
            let activation = match self.u8("activation")? {
                0 => Activation::Identity,
                1 => Activation::LeakyRelu,
                2 => Activation::Tanh,
                other => return Err(CheckpointError::Corrupt(format!("unknown activation tag {other}"))),
            };
            let weights = self.f64s(rows.checked_mul(cols).ok_or(CheckpointError::Truncated("weights"))?, "weights")?;
            let bias = self.f64s(rows, "biases")?;
            layers.push(Layer { rows, cols, weights, bias, activation });
        }
        Mlp::new(layers).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    fn grads(&mut self, like: &Mlp) -> Result<Grads, CheckpointError> {
        let mut layers = Vec::with_capacity(like.layers().len());
        for l in like.layers() {
            let weights = self.f64s(l.weights.len(), "optimizer moments")?;
            let bias = self.f64s(l.bias.len(), "optimizer moments")?;
            layers.push(LayerGrads { weights, bias });
        }
        Ok(Grads { layers })
    }

    fn adam(&mut self, like: &Mlp) -> Result<AdamState, CheckpointError> {
        let step = self.u64("optimizer step")?;
        let beta1 = self.f64("optimizer beta1")?;
        let beta2 = self.f64("optimizer beta2")?;
        let eps = self.f64("optimizer eps")?;
        let m = self.grads(like)?;
        let v = self.grads(like)?;
        Ok(AdamState { m, v, step, beta1, beta2, eps })
    }

    fn rng(&mut self) -> Result<RngState, CheckpointError> {
        let key = self.take(32, "rng key")?.try_into().expect("32 bytes");
        let stream = self.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(self.take(16, "rng position")?.try_into().expect("16 bytes"));
        Ok(RngState { key, stream, word_pos })
    }
}

pub fn encode(s: &Snapshot) -> Vec<u8> {
    let (settings, nets, opts): (AgentSettings, Vec<&Mlp>, Vec<&AdamState>) = match &s.agent {
        Agent::Td3(a) => {
            let n = a.nets();
            (AgentSettings::Td3(*a.config()), n.all(), vec![&n.actor_opt, &n.critic1_opt, &n.critic2_opt])
        }
        Agent::Sac(a) => {
            let n = a.nets();
            (AgentSettings::Sac(*a.config()), n.all(), vec![&n.actor_opt, &n.critic1_opt, &n.critic2_opt])
        }
    };
    let meta = Meta {
        scenario: s.config.clone(),
        agent: settings,
        update_count: s.agent.update_count(),
        env_steps: s.env_steps,
        episodes: s.episodes,
        recent_returns: s.recent_returns.clone(),
        eval_rounds: s.eval_rounds,
        best_eval_return: s.best_eval_return,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(json.len() as u32);
    w.0.extend_from_slice(&json);
    w.u32(nets.len() as u32);
    for n in &nets {
        w.net(n);
    }
    for o in opts {
        w.adam(o);
    }
    if let Agent::Sac(a) = &s.agent {
        let n = a.nets();
        w.f64s(&[n.log_alpha, n.alpha_opt.m, n.alpha_opt.v]);
        w.u64(n.alpha_opt.step);
    }
    for r in [&s.rngs.env, &s.rngs.agent, &s.rngs.explore] {
        w.rng(r);
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Snapshot, CheckpointError> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = r.u32("metadata length")? as usize;
    let meta: Meta = serde_json::from_slice(r.take(len, "metadata")?).map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    let count = r.u32("network count")? as usize;
    let expected = match meta.agent {
        AgentSettings::Td3(_) => 6,
        AgentSettings::Sac(_) => 5,
    };
    if count != expected {
        return Err(CheckpointError::Corrupt(format!("expected {expected} networks, found {count}")));
    }
    let mut nets = (0..count).map(|_| r.net()).collect::<Result<Vec<_>, _>>()?;
    let opts = (0..3).map(|i| r.adam(&nets[i])).collect::<Result<Vec<_>, _>>()?;
    let [actor_opt, critic1_opt, critic2_opt]: [AdamState; 3] = opts.try_into().expect("three optimizers");
    let agent = match meta.agent {
        AgentSettings::Td3(cfg) => {
            let [actor, critic1, critic2, actor_target, critic1_target, critic2_target]: [Mlp; 6] =
                std::mem::take(&mut nets).try_into().expect("six networks");
            let nets = Td3Nets {
                actor,
                critic1,
                critic2,
                actor_target,
                critic1_target,
                critic2_target,
                actor_opt,
                critic1_opt,
                critic2_opt,
            };
            Agent::Td3(Td3Agent::from_parts(cfg, nets, meta.update_count))
        }
        AgentSettings::Sac(cfg) => {
            let [actor, critic1, critic2, critic1_target, critic2_target]: [Mlp; 5] =
                std::mem::take(&mut nets).try_into().expect("five networks");
            let log_alpha = r.f64("log alpha")?;
            let m = r.f64("alpha moments")?;
            let v = r.f64("alpha moments")?;
            let step = r.u64("alpha step")?;
            let nets = SacNets {
                actor,
                critic1,
                critic2,
                critic1_target,
                critic2_target,
                actor_opt,
                critic1_opt,
                critic2_opt,
                log_alpha,
                alpha_opt: ScalarAdam { m, v, step },
            };
            Agent::Sac(SacAgent::from_parts(cfg, nets, meta.update_count))
        }
    };
    let rngs = TrainerRngs { env: r.rng()?, agent: r.rng()?, explore: r.rng()? };
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    check_shapes(&agent)?;
    if agent.algorithm() != meta.scenario.algorithm {
        return Err(CheckpointError::Corrupt("scenario and agent disagree on the algorithm".into()));
    }
    Ok(Snapshot {
        config: meta.scenario,
        agent,
        env_steps: meta.env_steps,
        episodes: meta.episodes,
        recent_returns: meta.recent_returns,
        eval_rounds: meta.eval_rounds,
        best_eval_return: meta.best_eval_return,
        rngs,
    })
}

fn check_shapes(agent: &Agent) -> Result<(), CheckpointError> {
    let (obs, act, actor_out) = match agent {
        Agent::Td3(a) => (a.config().obs_dim, a.config().act_dim, a.config().act_dim),
        Agent::Sac(a) => (a.config().obs_dim, a.config().act_dim, 2 * a.config().act_dim),
    };
    let nets = agent.networks();
    let actor = nets[0];
    let is_actor = |i: usize| i == 0 || (matches!(agent, Agent::Td3(_)) && i == 3);
    let ok = nets.iter().enumerate().all(|(i, n)| {
        if is_actor(i) {
            n.input_dim() == obs && n.output_dim() == actor_out && n.same_shape(actor)
        } else {
            n.input_dim() == obs + act && n.output_dim() == 1
        }
    });
    if ok {
        Ok(())
    } else {
        Err(CheckpointError::Corrupt("network shapes do not match the agent settings".into()))
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save(path: &Path, s: &Snapshot) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("meq.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode(s))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot, CheckpointError> {
    decode(&std::fs::read(path)?)
}

