//! Episodic hover task around a fixed target point.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, QuadModel, QuadState, RpmCommand};

pub const OBS_DIM: usize = 12;
pub const ACT_DIM: usize = 4;
pub const MAX_EPISODE_STEPS: usize = 502;
/// Physics substeps per agent step (250 Hz physics, 50 Hz agent).
pub const SUBSTEPS: usize = 5;

/// Rational-term coefficient `a` of the reward.
pub const REWARD_A: f64 = 7.0;
/// Width of the Gaussian reward term.
pub const REWARD_SIGMA: f64 = 0.5;
/// Floor on the error inside the rational term.
pub const REWARD_ERROR_FLOOR: f64 = 1e-3;

pub const CRASH_MIN_ALTITUDE: f64 = 0.02;
pub const CRASH_MAX_TILT: f64 = 1.4;
pub const CRASH_MAX_ERROR: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode has ended; call reset first")]
    EpisodeEnded,
    #[error("environment has not been reset")]
    NotReset,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

/// Initial-position sampling box and hover target, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvBounds {
    pub xy: [f64; 2],
    pub z: [f64; 2],
    pub target: [f64; 3],
}

impl EnvBounds {
    pub fn small() -> Self {
        EnvBounds {
            xy: [-0.5, 0.5],
            z: [0.5, 1.5],
            target: [0.0, 0.0, 1.0],
        }
    }

    pub fn large() -> Self {
        EnvBounds {
            xy: [-2.5, 2.5],
            z: [0.2, 2.5],
            target: [0.0, 0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.xy) || !ordered(self.z) {
            return Err(EnvError::InvalidBounds("ranges must be finite with low <= high".into()));
        }
        if !(self.target[2] > 0.0) || self.target.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidBounds("target must be finite with z > 0".into()));
        }
        Ok(())
    }

    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let mut draw = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
        let x = draw(self.xy);
        let y = draw(self.xy);
        let z = draw(self.z);
        [x, y, z]
    }
}

/// `(φ, θ, ψ, v_x, v_y, v_z, ω_x, ω_y, ω_z, Δx, Δy, Δz)` with Δ = target − position.
pub type Observation = [f64; OBS_DIM];

/// Four rotor commands in [−1, 1]; out-of-range inputs are clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedAction([f64; ACT_DIM]);

impl NormalizedAction {
    pub fn new(a: [f64; ACT_DIM]) -> Self {
        NormalizedAction(a.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }))
    }

    pub fn from_slice(a: &[f64]) -> Self {
        let mut out = [0.0; ACT_DIM];
        out.copy_from_slice(&a[..ACT_DIM]);
        Self::new(out)
    }

    pub fn values(&self) -> [f64; ACT_DIM] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndKind {
    Running,
    /// Step limit reached; the next state is still worth bootstrapping from.
    Truncated,
    /// Crashed; no future value.
    Terminated,
}

impl EndKind {
    pub fn is_done(self) -> bool {
        self != EndKind::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub end: EndKind,
    /// Distance to target after the step.
    pub error: f64,
}

pub fn euclidean_error(delta: [f64; 3]) -> f64 {
    (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt()
}

/// `1/(a·max(e, e_min)) + a/√(2πσ²)·exp(−½(e/σ)²)` with a = 7, σ = 0.5.
pub fn reward(error: f64) -> f64 {
    let rational = 1.0 / (REWARD_A * error.max(REWARD_ERROR_FLOOR));
    let norm = REWARD_A / (2.0 * std::f64::consts::PI * REWARD_SIGMA * REWARD_SIGMA).sqrt();
    let z = error / REWARD_SIGMA;
    rational + norm * (-0.5 * z * z).exp()
}

/// Largest per-step reward, reached anywhere within the error floor.
pub fn max_step_reward() -> f64 {
    reward(0.0)
}

/// Maps [−1, 1] linearly onto [0, rpm_max].
pub fn denormalize_action(a: &NormalizedAction, model: &QuadModel) -> RpmCommand {
    RpmCommand(a.0.map(|v| (v + 1.0) / 2.0 * model.rpm_max))
}

/// Normalized action that commands `rpm` on every rotor.
pub fn normalize_rpm(rpm: f64, model: &QuadModel) -> f64 {
    2.0 * rpm / model.rpm_max - 1.0
}

pub fn position_delta(state: &QuadState, target: [f64; 3]) -> [f64; 3] {
    [
        target[0] - state.position.x,
        target[1] - state.position.y,
        target[2] - state.position.z,
    ]
}

pub fn observe(state: &QuadState, target: [f64; 3]) -> Observation {
    let (roll, pitch, yaw) = dynamics::euler_angles(state);
    let d = position_delta(state, target);
    let v = state.velocity;
    let w = state.angular_velocity;
    [roll, pitch, yaw, v.x, v.y, v.z, w.x, w.y, w.z, d[0], d[1], d[2]]
}

/// Crash predicate: too low, tipped over, or strayed too far.
pub fn is_crashed(state: &QuadState, target: [f64; 3]) -> bool {
    let (roll, pitch, _) = dynamics::euler_angles(state);
    state.position.z < CRASH_MIN_ALTITUDE
        || roll.abs() > CRASH_MAX_TILT
        || pitch.abs() > CRASH_MAX_TILT
        || euclidean_error(position_delta(state, target)) > CRASH_MAX_ERROR
}

#[derive(Debug, Clone)]
pub struct HoverEnv {
    model: QuadModel,
    bounds: EnvBounds,
    state: Option<QuadState>,
    steps: usize,
    ended: bool,
}

impl HoverEnv {
    pub fn new(model: QuadModel, bounds: EnvBounds) -> Result<Self, EnvError> {
        model.validate()?;
        bounds.validate()?;
        Ok(HoverEnv {
            model,
            bounds,
            state: None,
            steps: 0,
            ended: false,
        })
    }

    pub fn model(&self) -> &QuadModel {
        &self.model
    }

    pub fn bounds(&self) -> &EnvBounds {
        &self.bounds
    }

    pub fn state(&self) -> Option<&QuadState> {
        self.state.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Starts an episode at a uniformly sampled position, level and at rest.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let p = self.bounds.sample_position(rng);
        self.reset_at(p)
    }

    /// Starts an episode at `position`, level and at rest.
    pub fn reset_at(&mut self, position: [f64; 3]) -> Observation {
        let s = QuadState::at_rest(Vector3::from(position));
        self.state = Some(s);
        self.steps = 0;
        self.ended = false;
        observe(&s, self.bounds.target)
    }

    pub fn step(&mut self, action: &NormalizedAction) -> Result<StepOutcome, EnvError> {
        if self.ended {
            return Err(EnvError::EpisodeEnded);
        }
        let mut s = self.state.ok_or(EnvError::NotReset)?;
        let cmd = denormalize_action(action, &self.model);
        for _ in 0..SUBSTEPS {
            s = dynamics::step(&self.model, &s, &cmd, self.model.dt_phys)?;
        }
        self.state = Some(s);
        self.steps += 1;
        let target = self.bounds.target;
        let error = euclidean_error(position_delta(&s, target));
        let (end, reward) = if is_crashed(&s, target) {
            (EndKind::Terminated, 0.0)
        } else if self.steps >= MAX_EPISODE_STEPS {
            (EndKind::Truncated, reward(error))
        } else {
            (EndKind::Running, reward(error))
        };
        self.ended = end.is_done();
        Ok(StepOutcome {
            obs: observe(&s, target),
            reward,
            end,
            error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn env(bounds: EnvBounds) -> HoverEnv {
        HoverEnv::new(QuadModel::default(), bounds).unwrap()
    }

    fn hover_action(model: &QuadModel) -> NormalizedAction {
        NormalizedAction::new([normalize_rpm(model.hover_rpm(), model); 4])
    }

    #[test]
    fn euclidean_error_examples() {
        assert_eq!(euclidean_error([0.0, 0.0, 0.0]), 0.0);
        assert_eq!(euclidean_error([3.0, 4.0, 0.0]), 5.0);
        assert!((euclidean_error([1.0, 1.0, 1.0]) - 1.7320508).abs() < 1e-7);
    }

    #[test]
    fn reward_reference_values() {
        // Independent evaluation of both terms.
        let gauss = |e: f64| 7.0 / (2.0 * std::f64::consts::PI * 0.25_f64).sqrt() * (-0.5 * (e / 0.5).powi(2)).exp();
        assert!((reward(0.5) - (1.0 / 3.5 + gauss(0.5))).abs() < 1e-12);
        // 30-digit evaluations of the same closed form.
        assert!((reward(0.5) - 3.673_304_428_982_292_6).abs() < 1e-12);
        assert!((reward(1.0) - 0.898_730_674_041_775_6).abs() < 1e-12);
        assert!((reward(100.0) - 1.0 / 700.0).abs() < 1e-12);
        assert!(reward(0.0) > reward(REWARD_ERROR_FLOOR));
        assert!(reward(0.0) - reward(REWARD_ERROR_FLOOR) < 1e-4);
    }

    #[test]
    fn reward_is_positive_and_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..10_000 {
            let e = REWARD_ERROR_FLOOR + (6.0 - REWARD_ERROR_FLOOR) * i as f64 / 9_999.0;
            let r = reward(e);
            assert!(r > 0.0 && r < prev);
            prev = r;
        }
    }

    #[test]
    fn action_mapping_endpoints() {
        let m = QuadModel::default();
        assert_eq!(denormalize_action(&NormalizedAction::new([-1.0; 4]), &m).0, [0.0; 4]);
        assert_eq!(denormalize_action(&NormalizedAction::new([1.0; 4]), &m).0, [m.rpm_max; 4]);
        let a = normalize_rpm(m.hover_rpm(), &m);
        assert!((a - 1.0 / 3.0).abs() < 1e-4);
        for u in denormalize_action(&NormalizedAction::new([a; 4]), &m).0 {
            assert!((u - m.hover_rpm()).abs() < 1e-8);
        }
        assert_eq!(NormalizedAction::new([3.0, -7.0, 0.5, f64::NAN]).values(), [1.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn reset_samples_inside_bounds() {
        for bounds in [EnvBounds::small(), EnvBounds::large()] {
            let mut e = env(bounds);
            let mut rng = stream(1, 1);
            for _ in 0..10_000 {
                let obs = e.reset(&mut rng);
                let p = e.state().unwrap().position;
                assert!(p.x >= bounds.xy[0] && p.x <= bounds.xy[1]);
                assert!(p.y >= bounds.xy[0] && p.y <= bounds.xy[1]);
                assert!(p.z >= bounds.z[0] && p.z <= bounds.z[1]);
                assert_eq!(obs[9], 0.0 - p.x);
                assert_eq!(obs[10], 0.0 - p.y);
                assert_eq!(obs[11], 1.0 - p.z);
                assert!(obs[..9].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn hovering_at_target_collects_top_reward() {
        let mut e = env(EnvBounds::small());
        e.reset_at([0.0, 0.0, 1.0]);
        let a = hover_action(e.model());
        let mut total = 0.0;
        let mut n = 0;
        loop {
            let out = e.step(&a).unwrap();
            assert!(out.error < 1e-3);
            assert!((out.reward - max_step_reward()).abs() < 1e-9);
            total += out.reward;
            n += 1;
            if out.end.is_done() {
                assert_eq!(out.end, EndKind::Truncated);
                break;
            }
        }
        assert_eq!(n, MAX_EPISODE_STEPS);
        assert!(total <= MAX_EPISODE_STEPS as f64 * max_step_reward() + 1e-6);
        assert_eq!(e.step(&a), Err(EnvError::EpisodeEnded));
    }

    #[test]
    fn idle_rotors_crash() {
        let mut e = env(EnvBounds::small());
        e.reset_at([0.0, 0.0, 0.5]);
        let mut n = 0;
        let last = loop {
            let out = e.step(&NormalizedAction::new([-1.0; 4])).unwrap();
            n += 1;
            if out.end.is_done() {
                break out;
            }
        };
        assert_eq!(last.end, EndKind::Terminated);
        assert_eq!(last.reward, 0.0);
        assert!(is_crashed(e.state().unwrap(), [0.0, 0.0, 1.0]));
        // √(2·0.48/g) ≈ 0.31 s ≈ 16 agent steps
        assert!(n < 20, "{n}");
    }

    #[test]
    fn stepping_before_reset_fails() {
        let mut e = env(EnvBounds::small());
        assert_eq!(e.step(&NormalizedAction::new([0.0; 4])), Err(EnvError::NotReset));
    }

    #[test]
    fn observation_is_pure_function_of_state() {
        let mut e = env(EnvBounds::small());
        e.reset_at([0.2, -0.1, 0.8]);
        let out = e.step(&NormalizedAction::new([0.4, 0.3, 0.35, 0.2])).unwrap();
        assert_eq!(out.obs, observe(e.state().unwrap(), [0.0, 0.0, 1.0]));
    }

    #[test]
    fn out_of_range_actions_are_clamped() {
        let mut a = env(EnvBounds::small());
        let mut b = env(EnvBounds::small());
        a.reset_at([0.0, 0.0, 1.0]);
        b.reset_at([0.0, 0.0, 1.0]);
        let wild = NormalizedAction::new([5.0, -3.0, 0.2, 1.5]);
        let tame = NormalizedAction::new([1.0, -1.0, 0.2, 1.0]);
        assert_eq!(a.step(&wild), b.step(&tame));
    }

    #[test]
    fn invalid_bounds_rejected() {
        let bad = EnvBounds { z: [1.0, 0.5], ..EnvBounds::small() };
        assert!(HoverEnv::new(QuadModel::default(), bad).is_err());
        let under = EnvBounds { target: [0.0, 0.0, 0.0], ..EnvBounds::small() };
        assert!(HoverEnv::new(QuadModel::default(), under).is_err());
    }
}
