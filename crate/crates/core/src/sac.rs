//! Soft actor-critic with a tanh-squashed Gaussian policy and optional
//! automatic temperature tuning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ensure_finite, gaussian, regress_critic, twin_min, twin_min_action_grad, AgentError, NetShape, UpdateStats};
use crate::env::{ACT_DIM, OBS_DIM};
use crate::net::{adam_kernel, adam_step, polyak_update, Activation, AdamState, BatchCache, Grads, Matrix, Mlp, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::replay::TransitionBatch;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the squash correction `log(1 − tanh² + ε)`.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EntropyMode {
    Static { alpha: f64 },
    Dynamic { target_entropy: f64, initial_alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub mode: EntropyMode,
    /// Std of extra Gaussian noise added to sampled actions during collection.
    pub exploration_noise: f64,
}

impl EntropyConfig {
    pub fn dynamic(act_dim: usize) -> Self {
        EntropyConfig {
            mode: EntropyMode::Dynamic { target_entropy: -(act_dim as f64), initial_alpha: 1.0 },
            exploration_noise: 0.0,
        }
    }

    pub fn fixed(alpha: f64) -> Self {
        EntropyConfig { mode: EntropyMode::Static { alpha }, exploration_noise: 0.0 }
    }

    pub fn with_noise(self, sigma: f64) -> Self {
        EntropyConfig { exploration_noise: sigma, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.mode {
            EntropyMode::Static { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(format!("static alpha must be positive, got {alpha}"))
            }
            EntropyMode::Dynamic { initial_alpha, target_entropy }
                if !(initial_alpha > 0.0 && initial_alpha.is_finite() && target_entropy.is_finite()) =>
            {
                return Err("dynamic entropy needs a positive initial alpha and finite target".into())
            }
            _ => {}
        }
        if !(self.exploration_noise >= 0.0 && self.exploration_noise.is_finite()) {
            return Err(format!("exploration noise must be >= 0, got {}", self.exploration_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub shape: NetShape,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub alpha_lr: f64,
    pub entropy: EntropyConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            shape: NetShape::PAPER,
            gamma: 0.99,
            tau: 0.005,
            lr: 0.0007,
            alpha_lr: 0.0007,
            entropy: EntropyConfig::dynamic(ACT_DIM),
        }
    }
}

/// Adam moments for a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub step: u64,
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64) {
        self.step += 1;
        let (mut p, mut m, mut v) = ([*param], [self.m], [self.v]);
        adam_kernel(&mut p, &[grad], &mut m, &mut v, self.step, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, lr);
        (*param, self.m, self.v) = (p[0], m[0], v[0]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacNets {
    /// Outputs `act_dim` means followed by `act_dim` raw log-stds.
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub log_alpha: f64,
    pub alpha_opt: ScalarAdam,
}

impl SacNets {
    pub fn new<R: Rng + ?Sized>(cfg: &SacConfig, rng: &mut R) -> Self {
        let actor = cfg.shape.actor(cfg.obs_dim, 2 * cfg.act_dim, Activation::Identity, &mut *rng);
        let critic1 = cfg.shape.critic(cfg.obs_dim, cfg.act_dim, &mut *rng);
        let critic2 = cfg.shape.critic(cfg.obs_dim, cfg.act_dim, &mut *rng);
        let alpha = match cfg.entropy.mode {
            EntropyMode::Static { alpha } => alpha,
            EntropyMode::Dynamic { initial_alpha, .. } => initial_alpha,
        };
        Self::from_online(actor, critic1, critic2, alpha.ln())
    }

    pub fn from_online(actor: Mlp, critic1: Mlp, critic2: Mlp, log_alpha: f64) -> Self {
        SacNets {
            actor_opt: AdamState::new(&actor),
            critic1_opt: AdamState::new(&critic1),
            critic2_opt: AdamState::new(&critic2),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha,
            alpha_opt: ScalarAdam::default(),
        }
    }

    /// actor, critic1, critic2, critic1_target, critic2_target.
    pub fn all(&self) -> Vec<&Mlp> {
        vec![&self.actor, &self.critic1, &self.critic2, &self.critic1_target, &self.critic2_target]
    }
}

/// One squashed sample for a single dimension given its standard-normal
/// draw: returns `(tanh(u), log-density contribution)`.
pub fn squashed_sample(mu: f64, log_std: f64, xi: f64) -> (f64, f64) {
    let log_std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let u = mu + log_std.exp() * xi;
    let a = u.tanh();
    (a, -0.5 * xi * xi - log_std - HALF_LOG_TWO_PI - (1.0 - a * a + SQUASH_EPS).ln())
}

/// Log-density contribution of pre-squash value `u` for one dimension.
pub fn squashed_log_density(u: f64, mu: f64, log_std: f64) -> f64 {
    let log_std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    squashed_sample(mu, log_std, (u - mu) / log_std.exp()).1
}

/// Everything a batch of reparameterized samples leaves behind for backprop.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Matrix,
    pub logp: Vec<f64>,
    sigma: Matrix,
    noise: Matrix,
    clamped: Vec<bool>,
    cache: BatchCache,
}

/// Standard-normal matrix filled row by row.
pub fn draw_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| gaussian(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized to fit")
}

/// Mean of the per-sample entropy estimates `−logp`.
pub fn mean_entropy(logp: &[f64]) -> f64 {
    -logp.iter().sum::<f64>() / logp.len() as f64
}

/// ∂J/∂α for `J = α·mean(Ĥ − H₀)`.
pub fn alpha_gradient(logp: &[f64], target_entropy: f64) -> f64 {
    mean_entropy(logp) - target_entropy
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: SacConfig,
    nets: SacNets,
    updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, rng: &mut R) -> Self {
        let nets = SacNets::new(&cfg, rng);
        SacAgent { cfg, nets, updates: 0 }
    }

    pub fn from_parts(cfg: SacConfig, nets: SacNets, updates: u64) -> Self {
        SacAgent { cfg, nets, updates }
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut SacConfig {
        &mut self.cfg
    }

    pub fn nets(&self) -> &SacNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut SacNets {
        &mut self.nets
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// Static mode returns the configured value untouched.
    pub fn alpha(&self) -> f64 {
        match self.cfg.entropy.mode {
            EntropyMode::Static { alpha } => alpha,
            EntropyMode::Dynamic { .. } => self.nets.log_alpha.exp(),
        }
    }

    fn head(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.nets.actor.predict(obs)?)
    }

    /// `tanh(μ(obs))`.
    pub fn policy_mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let out = self.head(obs)?;
        Ok(out[..self.cfg.act_dim].iter().map(|m| m.tanh()).collect())
    }

    /// One reparameterized draw and its log-probability.
    pub fn policy_sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), AgentError> {
        let out = self.head(obs)?;
        let k = self.cfg.act_dim;
        let mut logp = 0.0;
        let mut action = Vec::with_capacity(k);
        for j in 0..k {
            let (a, lp) = squashed_sample(out[j], out[k + j], gaussian(rng));
            action.push(a);
            logp += lp;
        }
        Ok((action, logp))
    }

    /// Policy sample, plus clamped Gaussian noise when configured.
    pub fn explore_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let (mut a, _) = self.policy_sample(obs, rng)?;
        let sigma = self.cfg.entropy.exploration_noise;
        if sigma > 0.0 {
            for v in &mut a {
                *v = (*v + sigma * gaussian(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Batch sampling with caller-provided standard-normal draws.
    pub fn sample_with_noise(&self, obs: &Matrix, noise: &Matrix) -> Result<PolicySample, AgentError> {
        let (out, cache) = self.nets.actor.forward_batch(obs)?;
        let (n, k) = (obs.rows(), self.cfg.act_dim);
        let mut actions = Matrix::zeros(n, k);
        let mut sigma = Matrix::zeros(n, k);
        let mut logp = vec![0.0; n];
        let mut clamped = vec![false; n * k];
        for r in 0..n {
            let row = out.row(r);
            for j in 0..k {
                let raw = row[k + j];
                clamped[r * k + j] = !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let (a, lp) = squashed_sample(row[j], ls, noise.get(r, j));
                actions.row_mut(r)[j] = a;
                sigma.row_mut(r)[j] = ls.exp();
                logp[r] += lp;
            }
        }
        Ok(PolicySample { actions, logp, sigma, noise: noise.clone(), clamped, cache })
    }

    /// `r + bootstrap·γ·(min(Q1', Q2')(s', a') − α·logp')` with `a'` drawn
    /// using `next_noise`.
    pub fn targets_with_noise(&self, batch: &TransitionBatch, next_noise: &Matrix, alpha: f64) -> Result<Vec<f64>, AgentError> {
        let s = self.sample_with_noise(&batch.next_obs, next_noise)?;
        let inputs = batch.next_obs.hconcat(&s.actions)?;
        let (q1, _) = self.nets.critic1_target.forward_batch(&inputs)?;
        let (q2, _) = self.nets.critic2_target.forward_batch(&inputs)?;
        let (qmin, _) = twin_min(&q1, &q2);
        Ok((0..batch.len())
            .map(|i| {
                let r = batch.rewards[i];
                if batch.bootstrap[i] {
                    r + self.cfg.gamma * (qmin[i] - alpha * s.logp[i])
                } else {
                    r
                }
            })
            .collect())
    }

    pub fn targets<R: Rng + ?Sized>(&self, batch: &TransitionBatch, alpha: f64, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let noise = draw_noise(batch.len(), self.cfg.act_dim, rng);
        self.targets_with_noise(batch, &noise, alpha)
    }

    /// `mean(α·logp − min(Q1, Q2))` at reparameterized actions.
    pub fn actor_loss(&self, obs: &Matrix, noise: &Matrix, alpha: f64) -> Result<f64, AgentError> {
        let s = self.sample_with_noise(obs, noise)?;
        let (q1, _) = self.nets.critic1.forward_batch(&obs.hconcat(&s.actions)?)?;
        let (q2, _) = self.nets.critic2.forward_batch(&obs.hconcat(&s.actions)?)?;
        let (qmin, _) = twin_min(&q1, &q2);
        let n = obs.rows() as f64;
        Ok(s.logp.iter().zip(&qmin).map(|(lp, q)| alpha * lp - q).sum::<f64>() / n)
    }

    pub fn actor_loss_and_grads(&self, obs: &Matrix, noise: &Matrix, alpha: f64) -> Result<(f64, Grads), AgentError> {
        let s = self.sample_with_noise(obs, noise)?;
        self.actor_grads_from(obs, &s, alpha)
    }

    fn actor_grads_from(&self, obs: &Matrix, s: &PolicySample, alpha: f64) -> Result<(f64, Grads), AgentError> {
        let (n, k) = (obs.rows(), self.cfg.act_dim);
        let nf = n as f64;
        let inputs = obs.hconcat(&s.actions)?;
        let (qmin, dq) = twin_min_action_grad(&self.nets.critic1, &self.nets.critic2, &inputs, self.cfg.obs_dim, -1.0 / nf)?;
        let loss = s.logp.iter().zip(&qmin).map(|(lp, q)| alpha * lp - q).sum::<f64>() / nf;
        let mut up = Matrix::zeros(n, 2 * k);
        for r in 0..n {
            for j in 0..k {
                let a = s.actions.get(r, j);
                let sq = 1.0 - a * a;
                let du = alpha * 2.0 * a * sq / (sq + SQUASH_EPS) / nf + dq.get(r, j) * sq;
                let row = up.row_mut(r);
                row[j] = du;
                row[k + j] = if s.clamped[r * k + j] {
                    0.0
                } else {
                    -alpha / nf + du * s.sigma.get(r, j) * s.noise.get(r, j)
                };
            }
        }
        let (g, _) = self.nets.actor.backward_batch(&s.cache, &up, true)?;
        Ok((loss, g.expect("parameter gradients requested")))
    }

    /// One Adam step on log-α from fresh-policy log-probs; returns the loss
    /// `α·mean(Ĥ − H₀)` in dynamic mode, `None` in static mode.
    pub fn update_alpha(&mut self, logp: &[f64]) -> Result<Option<f64>, AgentError> {
        let EntropyMode::Dynamic { target_entropy, .. } = self.cfg.entropy.mode else {
            return Ok(None);
        };
        let alpha = self.nets.log_alpha.exp();
        let gap = alpha_gradient(logp, target_entropy);
        ensure_finite("entropy estimate", gap, self.updates)?;
        // d/d(log α) of α·gap is α·gap.
        self.nets.alpha_opt.step(&mut self.nets.log_alpha, alpha * gap, self.cfg.alpha_lr);
        let next = self.nets.log_alpha.exp();
        if !(next > 0.0 && next.is_finite()) {
            return Err(AgentError::NonFinite { what: "alpha", value: next, update: self.updates });
        }
        Ok(Some(alpha * gap))
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<UpdateStats, AgentError> {
        let index = self.updates + 1;
        let k = self.cfg.act_dim;
        let noise = draw_noise(batch.len(), k, rng);
        let next_noise = draw_noise(batch.len(), k, rng);

        let fresh = self.sample_with_noise(&batch.obs, &noise)?;
        let entropy = mean_entropy(&fresh.logp);
        let alpha = self.alpha();
        let alpha_loss = self.update_alpha(&fresh.logp)?;

        let y = self.targets_with_noise(batch, &next_noise, alpha)?;
        let inputs = batch.obs.hconcat(&batch.actions)?;
        let lr = self.cfg.lr;
        let n = &mut self.nets;
        let critic1_loss = regress_critic(&mut n.critic1, &mut n.critic1_opt, &inputs, &y, lr, "critic1 loss", index)?;
        let critic2_loss = regress_critic(&mut n.critic2, &mut n.critic2_opt, &inputs, &y, lr, "critic2 loss", index)?;

        let (actor_loss, grads) = self.actor_grads_from(&batch.obs, &fresh, alpha)?;
        ensure_finite("actor loss", actor_loss, index)?;
        let n = &mut self.nets;
        adam_step(&mut n.actor, &grads, &mut n.actor_opt, lr)?;
        polyak_update(&mut n.critic1_target, &n.critic1, self.cfg.tau)?;
        polyak_update(&mut n.critic2_target, &n.critic2, self.cfg.tau)?;
        self.updates = index;
        Ok(UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss: Some(actor_loss),
            alpha_loss,
            alpha: Some(self.alpha()),
            entropy: Some(entropy),
        })
    }
}
