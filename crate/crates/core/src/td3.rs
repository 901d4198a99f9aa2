//! Twin-delayed deterministic policy gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ensure_finite, gaussian, regress_critic, twin_min, AgentError, NetShape, UpdateStats};
use crate::env::{ACT_DIM, OBS_DIM};
use crate::net::{adam_step, polyak_update, Activation, AdamState, Grads, Matrix, Mlp};
use crate::replay::TransitionBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub shape: NetShape,
    pub gamma: f64,
    pub tau: f64,
    /// Std of the smoothing noise added to target actions.
    pub target_noise: f64,
    pub noise_clip: f64,
    /// Std of the Gaussian noise added to actions during collection.
    pub exploration_noise: f64,
    pub policy_delay: u64,
    pub lr: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            shape: NetShape::PAPER,
            gamma: 0.99,
            tau: 0.005,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.2,
            policy_delay: 2,
            lr: 0.0007,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Td3Nets {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
}

impl Td3Nets {
    /// Fresh networks; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(cfg: &Td3Config, rng: &mut R) -> Self {
        let actor = cfg.shape.actor(cfg.obs_dim, cfg.act_dim, Activation::Tanh, &mut *rng);
        let critic1 = cfg.shape.critic(cfg.obs_dim, cfg.act_dim, &mut *rng);
        let critic2 = cfg.shape.critic(cfg.obs_dim, cfg.act_dim, &mut *rng);
        Self::from_online(actor, critic1, critic2)
    }

    pub fn from_online(actor: Mlp, critic1: Mlp, critic2: Mlp) -> Self {
        Td3Nets {
            actor_opt: AdamState::new(&actor),
            critic1_opt: AdamState::new(&critic1),
            critic2_opt: AdamState::new(&critic2),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
        }
    }

    /// actor, critic1, critic2, then their targets.
    pub fn all(&self) -> Vec<&Mlp> {
        vec![
            &self.actor,
            &self.critic1,
            &self.critic2,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    cfg: Td3Config,
    nets: Td3Nets,
    updates: u64,
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(cfg: Td3Config, rng: &mut R) -> Self {
        let nets = Td3Nets::new(&cfg, rng);
        Td3Agent { cfg, nets, updates: 0 }
    }

    pub fn from_parts(cfg: Td3Config, nets: Td3Nets, updates: u64) -> Self {
        Td3Agent { cfg, nets, updates }
    }

    pub fn config(&self) -> &Td3Config {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut Td3Config {
        &mut self.cfg
    }

    pub fn nets(&self) -> &Td3Nets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut Td3Nets {
        &mut self.nets
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.nets.actor.predict(obs)?)
    }

    /// `clamp(actor(obs) + N(0, σ²), −1, 1)` per component.
    pub fn explore_action<R: Rng + ?Sized>(&self, obs: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let mut a = self.act(obs)?;
        if sigma > 0.0 {
            for v in &mut a {
                *v = (*v + sigma * gaussian(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Smoothed target actions `clamp(π'(s') + clamp(ε, −c, c), −1, 1)`.
    pub fn target_actions<R: Rng + ?Sized>(&self, next_obs: &Matrix, rng: &mut R) -> Result<Matrix, AgentError> {
        let (mut a, _) = self.nets.actor_target.forward_batch(next_obs)?;
        let (sigma, clip) = (self.cfg.target_noise, self.cfg.noise_clip);
        for v in a.as_mut_slice() {
            let eps = if sigma > 0.0 { (sigma * gaussian(rng)).clamp(-clip, clip) } else { 0.0 };
            *v = (*v + eps).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    /// Clipped double-Q targets `r + bootstrap·γ·min(Q1', Q2')(s', a')`.
    pub fn targets<R: Rng + ?Sized>(&self, batch: &TransitionBatch, rng: &mut R) -> Result<Vec<f64>, AgentError> {
        let a_next = self.target_actions(&batch.next_obs, rng)?;
        let inputs = batch.next_obs.hconcat(&a_next)?;
        let (q1, _) = self.nets.critic1_target.forward_batch(&inputs)?;
        let (q2, _) = self.nets.critic2_target.forward_batch(&inputs)?;
        let (qmin, _) = twin_min(&q1, &q2);
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.bootstrap)
            .zip(qmin)
            .map(|((&r, &b), q)| if b { r + self.cfg.gamma * q } else { r })
            .collect())
    }

    /// `−mean Q1(s, π(s))` and its gradient with respect to the actor.
    pub fn actor_loss_and_grads(&self, obs: &Matrix) -> Result<(f64, Grads), AgentError> {
        let n = obs.rows();
        let (a, actor_cache) = self.nets.actor.forward_batch(obs)?;
        let inputs = obs.hconcat(&a)?;
        let (q, cache) = self.nets.critic1.forward_batch(&inputs)?;
        let loss = -q.as_slice().iter().sum::<f64>() / n as f64;
        let up = Matrix::from_vec(n, 1, vec![-1.0 / n as f64; n])?;
        let (_, d_in) = self.nets.critic1.backward_batch(&cache, &up, false)?;
        let da = d_in.columns(self.cfg.obs_dim, inputs.cols());
        let (g, _) = self.nets.actor.backward_batch(&actor_cache, &da, true)?;
        Ok((loss, g.expect("parameter gradients requested")))
    }

    /// `−mean Q1(s, π(s))` without gradients.
    pub fn actor_loss(&self, obs: &Matrix) -> Result<f64, AgentError> {
        let (a, _) = self.nets.actor.forward_batch(obs)?;
        let (q, _) = self.nets.critic1.forward_batch(&obs.hconcat(&a)?)?;
        Ok(-q.as_slice().iter().sum::<f64>() / obs.rows() as f64)
    }

    /// Next update in sequence.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<UpdateStats, AgentError> {
        let index = self.updates + 1;
        let stats = self.update_with_index(batch, index, rng)?;
        self.updates = index;
        Ok(stats)
    }

    /// Critic step every call; actor step and target tracking only when
    /// `step_index` is a multiple of the policy delay.
    pub fn update_with_index<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        step_index: u64,
        rng: &mut R,
    ) -> Result<UpdateStats, AgentError> {
        let y = self.targets(batch, rng)?;
        let inputs = batch.obs.hconcat(&batch.actions)?;
        let lr = self.cfg.lr;
        let n = &mut self.nets;
        let critic1_loss = regress_critic(&mut n.critic1, &mut n.critic1_opt, &inputs, &y, lr, "critic1 loss", step_index)?;
        let critic2_loss = regress_critic(&mut n.critic2, &mut n.critic2_opt, &inputs, &y, lr, "critic2 loss", step_index)?;

        let mut actor_loss = None;
        if step_index.is_multiple_of(self.cfg.policy_delay.max(1)) {
            let (loss, grads) = self.actor_loss_and_grads(&batch.obs)?;
            ensure_finite("actor loss", loss, step_index)?;
            let n = &mut self.nets;
            adam_step(&mut n.actor, &grads, &mut n.actor_opt, lr)?;
            polyak_update(&mut n.actor_target, &n.actor, self.cfg.tau)?;
            polyak_update(&mut n.critic1_target, &n.critic1, self.cfg.tau)?;
            polyak_update(&mut n.critic2_target, &n.critic2, self.cfg.tau)?;
            actor_loss = Some(loss);
        }
        Ok(UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss,
            ..UpdateStats::default()
        })
    }
}
