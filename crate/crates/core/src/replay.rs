//! Fixed-capacity ring buffer of transitions with uniform minibatch sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("buffer holds {have} transitions, cannot sample {want}")]
    Insufficient { have: usize, want: usize },
    #[error("transition shape mismatch: {0}")]
    Shape(String),
}

/// Element type used to store transitions; arithmetic is always f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoragePrecision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// False only when the episode terminated (crash) at `next_obs`.
    pub bootstrap: bool,
}

/// Column-major view of a sampled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub bootstrap: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn get(&self, i: usize) -> Transition {
        Transition {
            obs: self.obs.row(i).to_vec(),
            action: self.actions.row(i).to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs.row(i).to_vec(),
            bootstrap: self.bootstrap[i],
        }
    }

    pub fn from_transitions(items: &[Transition]) -> Result<Self, ReplayError> {
        let shape = |e: crate::net::NetError| ReplayError::Shape(e.to_string());
        let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| items.iter().map(f).collect::<Vec<_>>();
        Ok(TransitionBatch {
            obs: Matrix::from_rows(&rows(&|t| t.obs.clone())).map_err(shape)?,
            actions: Matrix::from_rows(&rows(&|t| t.action.clone())).map_err(shape)?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_obs: Matrix::from_rows(&rows(&|t| t.next_obs.clone())).map_err(shape)?,
            bootstrap: items.iter().map(|t| t.bootstrap).collect(),
        })
    }
}

#[derive(Debug, Clone)]
enum Store {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl Store {
    fn write(&mut self, at: usize, values: &[f64]) {
        match self {
            Store::F64(v) => v[at..at + values.len()].copy_from_slice(values),
            Store::F32(v) => {
                for (d, s) in v[at..at + values.len()].iter_mut().zip(values) {
                    *d = *s as f32;
                }
            }
        }
    }

    fn read_into(&self, at: usize, out: &mut [f64]) {
        let end = at + out.len();
        match self {
            Store::F64(v) => out.copy_from_slice(&v[at..end]),
            Store::F32(v) => {
                for (d, s) in out.iter_mut().zip(&v[at..end]) {
                    *d = f64::from(*s);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    len: usize,
    cursor: usize,
    /// One row per slot: obs, action, reward, next_obs.
    rows: Store,
    bootstrap: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, precision: StoragePrecision) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        let width = 2 * obs_dim + act_dim + 1;
        let rows = match precision {
            StoragePrecision::F64 => Store::F64(vec![0.0; capacity * width]),
            StoragePrecision::F32 => Store::F32(vec![0.0; capacity * width]),
        };
        ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            len: 0,
            cursor: 0,
            rows,
            bootstrap: vec![false; capacity],
        }
    }

    fn width(&self) -> usize {
        2 * self.obs_dim + self.act_dim + 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), ReplayError> {
        self.push_parts(&t.obs, &t.action, t.reward, &t.next_obs, t.bootstrap)
    }

    pub fn push_parts(
        &mut self,
        obs: &[f64],
        action: &[f64],
        reward: f64,
        next_obs: &[f64],
        bootstrap: bool,
    ) -> Result<(), ReplayError> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim || action.len() != self.act_dim {
            return Err(ReplayError::Shape(format!(
                "expected obs {} / action {}, got {} / {} / {}",
                self.obs_dim,
                self.act_dim,
                obs.len(),
                action.len(),
                next_obs.len()
            )));
        }
        if !reward.is_finite() {
            return Err(ReplayError::Shape("reward must be finite".into()));
        }
        let base = self.cursor * self.width();
        self.rows.write(base, obs);
        self.rows.write(base + self.obs_dim, action);
        self.rows.write(base + self.obs_dim + self.act_dim, &[reward]);
        self.rows.write(base + self.obs_dim + self.act_dim + 1, next_obs);
        self.bootstrap[self.cursor] = bootstrap;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Slot `i` in storage order (not insertion order once wrapped).
    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| {
            let mut row = vec![0.0; self.width()];
            self.rows.read_into(i * self.width(), &mut row);
            let (o, a) = (self.obs_dim, self.act_dim);
            Transition {
                obs: row[..o].to_vec(),
                action: row[o..o + a].to_vec(),
                reward: row[o + a],
                next_obs: row[o + a + 1..].to_vec(),
                bootstrap: self.bootstrap[i],
            }
        })
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, ReplayError> {
        if n == 0 || self.len < n {
            return Err(ReplayError::Insufficient { have: self.len, want: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TransitionBatch, ReplayError> {
        let idx = self.sample_indices(n, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> TransitionBatch {
        let (o, a) = (self.obs_dim, self.act_dim);
        let n = idx.len();
        let mut obs = Matrix::zeros(n, o);
        let mut actions = Matrix::zeros(n, a);
        let mut next_obs = Matrix::zeros(n, o);
        let mut rewards = Vec::with_capacity(n);
        let mut bootstrap = Vec::with_capacity(n);
        let mut row = vec![0.0; self.width()];
        for (k, &i) in idx.iter().enumerate() {
            self.rows.read_into(i * self.width(), &mut row);
            obs.row_mut(k).copy_from_slice(&row[..o]);
            actions.row_mut(k).copy_from_slice(&row[o..o + a]);
            rewards.push(row[o + a]);
            next_obs.row_mut(k).copy_from_slice(&row[o + a + 1..]);
            bootstrap.push(self.bootstrap[i]);
        }
        TransitionBatch {
            obs,
            actions,
            rewards,
            next_obs,
            bootstrap,
        }
    }
}
