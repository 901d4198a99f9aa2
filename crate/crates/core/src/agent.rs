//! Pieces shared by both learners plus a small enum that lets the trainer
//! drive either one.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{adam_step, AdamState, Activation, Matrix, Mlp, NetError};
use crate::replay::TransitionBatch;
use crate::sac::SacAgent;
use crate::td3::Td3Agent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("non-finite {what} (value {value}) at update {update}")]
    NonFinite { what: &'static str, value: f64, update: u64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Sac,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Td3 => "td3",
            Algorithm::Sac => "sac",
        })
    }
}

/// Hidden layer widths shared by actor and critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden: [usize; 2],
}

impl NetShape {
    pub const PAPER: NetShape = NetShape { hidden: [400, 300] };
    pub const DESK: NetShape = NetShape { hidden: [64, 64] };

    pub fn actor<R: Rng + ?Sized>(&self, obs_dim: usize, outputs: usize, output: Activation, rng: &mut R) -> Mlp {
        Mlp::init(&[obs_dim, self.hidden[0], self.hidden[1], outputs], Activation::LeakyRelu, output, rng)
    }

    pub fn critic<R: Rng + ?Sized>(&self, obs_dim: usize, act_dim: usize, rng: &mut R) -> Mlp {
        Mlp::init(
            &[obs_dim + act_dim, self.hidden[0], self.hidden[1], 1],
            Activation::LeakyRelu,
            Activation::Identity,
            rng,
        )
    }
}

/// Diagnostics from one gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub(crate) fn ensure_finite(what: &'static str, value: f64, update: u64) -> Result<f64, AgentError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AgentError::NonFinite { what, value, update })
    }
}

/// One Adam step of `critic` on mean-squared error to `targets`; returns the
/// loss before the step.
pub(crate) fn regress_critic(
    critic: &mut Mlp,
    opt: &mut AdamState,
    inputs: &Matrix,
    targets: &[f64],
    lr: f64,
    what: &'static str,
    update: u64,
) -> Result<f64, AgentError> {
    let (q, cache) = critic.forward_batch(inputs)?;
    let n = targets.len() as f64;
    let residual: Vec<f64> = q.as_slice().iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = ensure_finite(what, residual.iter().map(|r| r * r).sum::<f64>() / n, update)?;
    let upstream = Matrix::from_vec(targets.len(), 1, residual.iter().map(|r| 2.0 * r / n).collect())?;
    let (grads, _) = critic.backward_batch(&cache, &upstream, true)?;
    adam_step(critic, &grads.expect("parameter gradients requested"), opt, lr)?;
    Ok(loss)
}

/// Rowwise `min(Q1, Q2)` and, per row, whether Q1 was the minimum.
pub(crate) fn twin_min(q1: &Matrix, q2: &Matrix) -> (Vec<f64>, Vec<bool>) {
    q1.as_slice()
        .iter()
        .zip(q2.as_slice())
        .map(|(&a, &b)| if a <= b { (a, true) } else { (b, false) })
        .unzip()
}

/// ∂L/∂action for `L = scale · Σ_rows min(Q1, Q2)(s, a)`, through whichever
/// critic is smaller on each row. Critic parameters are left alone.
pub(crate) fn twin_min_action_grad(
    critic1: &Mlp,
    critic2: &Mlp,
    inputs: &Matrix,
    obs_dim: usize,
    scale: f64,
) -> Result<(Vec<f64>, Matrix), NetError> {
    let (q1, c1) = critic1.forward_batch(inputs)?;
    let (q2, c2) = critic2.forward_batch(inputs)?;
    let (qmin, first) = twin_min(&q1, &q2);
    let n = qmin.len();
    let up1 = Matrix::from_vec(n, 1, first.iter().map(|&f| if f { scale } else { 0.0 }).collect())?;
    let up2 = Matrix::from_vec(n, 1, first.iter().map(|&f| if f { 0.0 } else { scale }).collect())?;
    let (_, d1) = critic1.backward_batch(&c1, &up1, false)?;
    let (_, d2) = critic2.backward_batch(&c2, &up2, false)?;
    let mut da = d1.columns(obs_dim, inputs.cols());
    for (a, b) in da.as_mut_slice().iter_mut().zip(d2.columns(obs_dim, inputs.cols()).as_slice()) {
        *a += b;
    }
    Ok((qmin, da))
}

/// Either learner behind one interface.
#[derive(Debug, Clone)]
pub enum Agent {
    Td3(Td3Agent),
    Sac(SacAgent),
}

impl Agent {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Agent::Td3(_) => Algorithm::Td3,
            Agent::Sac(_) => Algorithm::Sac,
        }
    }

    /// Noiseless action used for evaluation.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        match self {
            Agent::Td3(a) => a.act(obs),
            Agent::Sac(a) => a.policy_mean_action(obs),
        }
    }

    /// Action used while collecting experience.
    pub fn explore<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>, AgentError> {
        match self {
            Agent::Td3(a) => a.explore_action(obs, a.config().exploration_noise, rng),
            Agent::Sac(a) => a.explore_action(obs, rng),
        }
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<UpdateStats, AgentError> {
        match self {
            Agent::Td3(a) => a.update(batch, rng),
            Agent::Sac(a) => a.update(batch, rng),
        }
    }

    pub fn update_count(&self) -> u64 {
        match self {
            Agent::Td3(a) => a.update_count(),
            Agent::Sac(a) => a.update_count(),
        }
    }

    /// Current entropy coefficient (SAC only).
    pub fn alpha(&self) -> Option<f64> {
        match self {
            Agent::Td3(_) => None,
            Agent::Sac(a) => Some(a.alpha()),
        }
    }

    /// Every network and its optimizer state, in a fixed order.
    pub fn networks(&self) -> Vec<&Mlp> {
        match self {
            Agent::Td3(a) => a.nets().all(),
            Agent::Sac(a) => a.nets().all(),
        }
    }
}
