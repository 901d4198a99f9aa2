//! Scenario presets, the collect/learn loop, and deterministic evaluation.
//!
//! The trainer performs no file I/O. Progress is reported through a
//! [`TrainSink`]; persistence is the caller's business.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError, Algorithm, NetShape, UpdateStats};
use crate::dynamics::{euler_angles, QuadModel};
use crate::env::{position_delta, euclidean_error, EndKind, EnvBounds, EnvError, HoverEnv, NormalizedAction, ACT_DIM, MAX_EPISODE_STEPS, OBS_DIM};
use crate::exec::Execution;
use crate::replay::{ReplayBuffer, ReplayError, StoragePrecision};
use crate::rng::{stream, streams, RngState, StreamRng};
use crate::sac::{EntropyConfig, EntropyMode, SacAgent, SacConfig};
use crate::td3::{Td3Agent, Td3Config};

pub const ROLLING_WINDOW: usize = 100;

pub const SMALL_PROBES: [[f64; 3]; 3] = [[-0.5, 0.5, 1.5], [-0.8, 0.8, 1.4], [-1.5, 1.5, 2.0]];
pub const LARGE_PROBES: [[f64; 3]; 3] = [[-1.5, 1.5, 1.5], [-2.5, 2.5, 2.5], [3.5, 3.5, 3.0]];

pub const PRESET_NAMES: [&str; 7] = [
    "small-td3",
    "small-sac",
    "large-td3-lownoise",
    "large-td3-highnoise",
    "large-sac-static",
    "large-sac-dynamic-noise",
    "large-sac-dynamic",
];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("unknown scenario `{name}`; expected one of: {}", PRESET_NAMES.join(", "))]
    UnknownScenario { name: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("learner diverged after {env_steps} env steps: {source}")]
    Diverged { env_steps: u64, source: AgentError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("output sink failed: {0}")]
    Sink(#[source] SinkError),
}

pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64×64 networks and step budgets that fit on a laptop.
    Desk,
    /// 400×300 networks, 4M steps.
    Paper,
}

impl Profile {
    pub fn shape(self) -> NetShape {
        match self {
            Profile::Desk => NetShape::DESK,
            Profile::Paper => NetShape::PAPER,
        }
    }

    pub fn total_steps(self, env: EnvKind) -> u64 {
        match (self, env) {
            (Profile::Desk, EnvKind::Small) => 150_000,
            (Profile::Desk, EnvKind::Large) => 300_000,
            (Profile::Paper, _) => 4_000_000,
        }
    }

    fn eval_interval(self) -> u64 {
        match self {
            Profile::Desk => 10_000,
            Profile::Paper => 50_000,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile `{s}` (desk, paper)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Small,
    Large,
}

impl EnvKind {
    pub fn bounds(self) -> EnvBounds {
        match self {
            EnvKind::Small => EnvBounds::small(),
            EnvKind::Large => EnvBounds::large(),
        }
    }

    pub fn probes(self) -> &'static [[f64; 3]] {
        match self {
            EnvKind::Small => &SMALL_PROBES,
            EnvKind::Large => &LARGE_PROBES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub buffer_size: usize,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub tau: f64,
    pub gamma: f64,
    /// Episodes between update bursts.
    pub train_every_episodes: u64,
    pub target_noise: f64,
    pub exploration_noise: f64,
    pub noise_clip: f64,
    pub control_hz: f64,
    pub max_episode_steps: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.0007,
            buffer_size: 1_000_000,
            warmup_steps: 10_000,
            batch_size: 256,
            tau: 0.005,
            gamma: 0.99,
            train_every_episodes: 1,
            target_noise: 0.2,
            exploration_noise: 0.2,
            noise_clip: 0.5,
            control_hz: 50.0,
            max_episode_steps: MAX_EPISODE_STEPS,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("control_hz", self.control_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("target_noise", self.target_noise), ("exploration_noise", self.exploration_noise), ("noise_clip", self.noise_clip)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.tau > 1.0 || self.gamma > 1.0 {
            return Err("tau and gamma must lie in [0, 1]".into());
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.train_every_episodes == 0 {
            return Err("buffer_size, batch_size and train_every_episodes must be positive".into());
        }
        if self.control_hz != 50.0 || self.max_episode_steps != MAX_EPISODE_STEPS {
            return Err(format!("the environment runs at 50 Hz with {MAX_EPISODE_STEPS}-step episodes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub env: EnvKind,
    /// SAC only; ignored for TD3.
    pub entropy: EntropyMode,
    /// SAC temperature learning rate.
    pub alpha_lr: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub eval_interval: u64,
    /// Random initial positions per evaluation, on top of the probe set.
    pub eval_episodes: usize,
    pub net: NetShape,
    pub replay_precision: StoragePrecision,
    pub hyper: Hyperparams,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if let Err(m) = self.hyper.validate() {
            return bad(m);
        }
        if self.total_steps < self.hyper.warmup_steps {
            return bad(format!(
                "total_steps ({}) must be at least warmup_steps ({})",
                self.total_steps, self.hyper.warmup_steps
            ));
        }
        if self.eval_interval == 0 || self.net.hidden.contains(&0) {
            return bad("eval_interval and hidden widths must be positive".into());
        }
        if !(self.alpha_lr.is_finite() && self.alpha_lr >= 0.0) {
            return bad(format!("alpha_lr must be >= 0, got {}", self.alpha_lr));
        }
        if let Err(m) = self.entropy_config().validate() {
            return bad(m);
        }
        Ok(())
    }

    pub fn entropy_config(&self) -> EntropyConfig {
        EntropyConfig { mode: self.entropy, exploration_noise: self.hyper.exploration_noise }
    }

    pub fn td3_config(&self) -> Td3Config {
        Td3Config {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            shape: self.net,
            gamma: self.hyper.gamma,
            tau: self.hyper.tau,
            target_noise: self.hyper.target_noise,
            noise_clip: self.hyper.noise_clip,
            exploration_noise: self.hyper.exploration_noise,
            policy_delay: 2,
            lr: self.hyper.learning_rate,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            shape: self.net,
            gamma: self.hyper.gamma,
            tau: self.hyper.tau,
            lr: self.hyper.learning_rate,
            alpha_lr: self.alpha_lr,
            entropy: self.entropy_config(),
        }
    }

    pub fn new_agent(&self) -> Agent {
        let mut rng = stream(self.seed, streams::INIT);
        match self.algorithm {
            Algorithm::Td3 => Agent::Td3(Td3Agent::new(self.td3_config(), &mut rng)),
            Algorithm::Sac => Agent::Sac(SacAgent::new(self.sac_config(), &mut rng)),
        }
    }
}

/// Named scenario for the given profile.
pub fn preset(name: &str, profile: Profile) -> Result<ScenarioConfig, TrainError> {
    let dynamic = EntropyMode::Dynamic { target_entropy: -(ACT_DIM as f64), initial_alpha: 1.0 };
    let (algorithm, env, entropy, noise) = match name {
        "small-td3" => (Algorithm::Td3, EnvKind::Small, dynamic, 0.2),
        "small-sac" => (Algorithm::Sac, EnvKind::Small, dynamic, 0.0),
        "large-td3-lownoise" => (Algorithm::Td3, EnvKind::Large, dynamic, 0.2),
        "large-td3-highnoise" => (Algorithm::Td3, EnvKind::Large, dynamic, 0.5),
        "large-sac-static" => (Algorithm::Sac, EnvKind::Large, EntropyMode::Static { alpha: 0.2 }, 0.0),
        "large-sac-dynamic-noise" => (Algorithm::Sac, EnvKind::Large, dynamic, 0.2),
        "large-sac-dynamic" => (Algorithm::Sac, EnvKind::Large, dynamic, 0.0),
        _ => return Err(TrainError::UnknownScenario { name: name.to_string() }),
    };
    let hyper = Hyperparams { exploration_noise: noise, ..Hyperparams::default() };
    Ok(ScenarioConfig {
        name: name.to_string(),
        algorithm,
        env,
        entropy,
        alpha_lr: hyper.learning_rate,
        total_steps: profile.total_steps(env),
        seed: 0,
        eval_interval: profile.eval_interval(),
        eval_episodes: 5,
        net: profile.shape(),
        replay_precision: StoragePrecision::F64,
        hyper,
    })
}

/// One training-log line, written after every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    /// Cumulative environment steps at the end of the episode.
    pub env_step: u64,
    pub episode: u64,
    pub episode_return: f64,
    pub rolling_mean_return: f64,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub wall_time_s: f64,
}

/// One recorded control step; step 0 is the initial state with no action.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub time_s: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Roll, pitch, yaw.
    pub euler: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub action: Option<[f64; ACT_DIM]>,
    pub reward: Option<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub init: [f64; 3],
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_error: f64,
    pub episode_return: f64,
    pub crashed: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EvalEpisode>,
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.episode_return).sum::<f64>() / self.episodes.len().max(1) as f64
    }
}

fn point(env: &HoverEnv, step: usize, action: Option<[f64; ACT_DIM]>, reward: Option<f64>) -> TrajectoryPoint {
    let s = env.state().expect("environment was reset");
    let (roll, pitch, yaw) = euler_angles(s);
    TrajectoryPoint {
        step,
        time_s: step as f64 * env.model().dt_phys * crate::env::SUBSTEPS as f64,
        position: s.position.into(),
        velocity: s.velocity.into(),
        euler: [roll, pitch, yaw],
        angular_velocity: s.angular_velocity.into(),
        action,
        reward,
        error: euclidean_error(position_delta(s, env.bounds().target)),
    }
}

/// One noiseless episode from `init` under the deterministic action rule.
pub fn run_eval_episode(agent: &Agent, model: &QuadModel, bounds: &EnvBounds, init: [f64; 3]) -> Result<EvalEpisode, TrainError> {
    let mut env = HoverEnv::new(*model, *bounds)?;
    let mut obs = env.reset_at(init);
    let mut trajectory = vec![point(&env, 0, None, None)];
    let mut ret = 0.0;
    let mut crashed = false;
    loop {
        let action = NormalizedAction::from_slice(&agent.act(&obs)?);
        let out = env.step(&action)?;
        ret += out.reward;
        trajectory.push(point(&env, env.steps(), Some(action.values()), Some(out.reward)));
        obs = out.obs;
        match out.end {
            EndKind::Running => {}
            EndKind::Truncated => break,
            EndKind::Terminated => {
                crashed = true;
                break;
            }
        }
    }
    Ok(EvalEpisode {
        init,
        final_error: trajectory.last().map(|p| p.error).unwrap_or(f64::NAN),
        steps: trajectory.len() - 1,
        trajectory,
        episode_return: ret,
        crashed,
    })
}

/// Runs one evaluation episode per initial position on a frozen policy.
pub fn evaluate(agent: &Agent, model: &QuadModel, bounds: &EnvBounds, inits: &[[f64; 3]], exec: Execution) -> Result<EvalReport, TrainError> {
    let episodes = exec.map(inits.len(), |i| run_eval_episode(agent, model, bounds, inits[i]));
    Ok(EvalReport { episodes: episodes.into_iter().collect::<Result<_, _>>()? })
}

/// Receives training output as it happens. Every method defaults to a no-op.
pub trait TrainSink {
    fn episode(&mut self, _row: &TrainLogRow) -> Result<(), SinkError> {
        Ok(())
    }

    /// `improved` is set when this round beat every earlier round.
    fn evaluation(&mut self, _round: u64, _report: &EvalReport, _state: &Snapshot, _improved: bool) -> Result<(), SinkError> {
        Ok(())
    }

    fn checkpoint(&mut self, _snapshot: &Snapshot) -> Result<(), SinkError> {
        Ok(())
    }
}

impl TrainSink for () {}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<TrainLogRow>,
    pub evaluations: Vec<(u64, f64)>,
    pub best: Option<Agent>,
    pub last_checkpoint: Option<Snapshot>,
}

impl TrainSink for MemorySink {
    fn episode(&mut self, row: &TrainLogRow) -> Result<(), SinkError> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn evaluation(&mut self, round: u64, report: &EvalReport, state: &Snapshot, improved: bool) -> Result<(), SinkError> {
        self.evaluations.push((round, report.mean_return()));
        if improved {
            self.best = Some(state.agent.clone());
        }
        Ok(())
    }

    fn checkpoint(&mut self, snapshot: &Snapshot) -> Result<(), SinkError> {
        self.last_checkpoint = Some(snapshot.clone());
        Ok(())
    }
}

/// Positions of the three trainer streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerRngs {
    pub env: RngState,
    pub agent: RngState,
    pub explore: RngState,
}

/// Everything needed to continue training, except the replay contents.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: ScenarioConfig,
    pub agent: Agent,
    pub env_steps: u64,
    pub episodes: u64,
    pub recent_returns: Vec<f64>,
    pub eval_rounds: u64,
    pub best_eval_return: Option<f64>,
    pub rngs: TrainerRngs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub final_rolling_mean: Option<f64>,
    pub best_eval_return: Option<f64>,
}

/// Holds the live state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: ScenarioConfig,
    model: QuadModel,
    env: HoverEnv,
    agent: Agent,
    buffer: ReplayBuffer,
    env_rng: StreamRng,
    agent_rng: StreamRng,
    explore_rng: StreamRng,
    env_steps: u64,
    episodes: u64,
    recent: VecDeque<f64>,
    eval_rounds: u64,
    best_eval_return: Option<f64>,
    exec: Execution,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let agent = cfg.new_agent();
        let buffer = ReplayBuffer::new(cfg.hyper.buffer_size, OBS_DIM, ACT_DIM, cfg.replay_precision);
        let rngs = TrainerRngs {
            env: RngState::capture(&stream(cfg.seed, streams::ENV)),
            agent: RngState::capture(&stream(cfg.seed, streams::AGENT)),
            explore: RngState::capture(&stream(cfg.seed, streams::EXPLORE)),
        };
        Self::assemble(cfg, agent, buffer, rngs, 0, 0, Vec::new(), 0, None)
    }

    /// Continues from `snapshot`, reattaching a replay buffer the caller kept.
    pub fn resume(snapshot: Snapshot, buffer: ReplayBuffer) -> Result<Self, TrainError> {
        snapshot.config.validate()?;
        if snapshot.agent.algorithm() != snapshot.config.algorithm {
            return Err(TrainError::InvalidConfig("snapshot agent does not match its config".into()));
        }
        Self::assemble(
            snapshot.config,
            snapshot.agent,
            buffer,
            snapshot.rngs,
            snapshot.env_steps,
            snapshot.episodes,
            snapshot.recent_returns,
            snapshot.eval_rounds,
            snapshot.best_eval_return,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: ScenarioConfig,
        agent: Agent,
        buffer: ReplayBuffer,
        rngs: TrainerRngs,
        env_steps: u64,
        episodes: u64,
        recent: Vec<f64>,
        eval_rounds: u64,
        best_eval_return: Option<f64>,
    ) -> Result<Self, TrainError> {
        let model = QuadModel::default();
        let env = HoverEnv::new(model, cfg.env.bounds())?;
        Ok(Trainer {
            model,
            env,
            agent,
            buffer,
            env_rng: rngs.env.restore(),
            agent_rng: rngs.agent.restore(),
            explore_rng: rngs.explore.restore(),
            env_steps,
            episodes,
            recent: recent.into_iter().collect(),
            eval_rounds,
            best_eval_return,
            exec: Execution::default(),
            started: Instant::now(),
            cfg,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn is_finished(&self) -> bool {
        self.env_steps >= self.cfg.total_steps
    }

    pub fn rolling_mean(&self) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            config: self.cfg.clone(),
            agent: self.agent.clone(),
            env_steps: self.env_steps,
            episodes: self.episodes,
            recent_returns: self.recent.iter().copied().collect(),
            eval_rounds: self.eval_rounds,
            best_eval_return: self.best_eval_return,
            rngs: TrainerRngs {
                env: RngState::capture(&self.env_rng),
                agent: RngState::capture(&self.agent_rng),
                explore: RngState::capture(&self.explore_rng),
            },
        }
    }

    fn random_action(&mut self) -> [f64; ACT_DIM] {
        std::array::from_fn(|_| self.explore_rng.random_range(-1.0..=1.0))
    }

    /// Collects one episode (cut short at the step budget), then runs one
    /// update per collected step once past warm-up.
    pub fn run_episode(&mut self, sink: &mut dyn TrainSink) -> Result<TrainLogRow, TrainError> {
        let mut obs = self.env.reset(&mut self.env_rng);
        let mut ret = 0.0;
        let mut length = 0_u64;
        loop {
            let action = if self.env_steps < self.cfg.hyper.warmup_steps {
                self.random_action()
            } else {
                let a = self.agent.explore(&obs, &mut self.explore_rng)?;
                NormalizedAction::from_slice(&a).values()
            };
            let out = self.env.step(&NormalizedAction::new(action))?;
            let bootstrap = out.end != EndKind::Terminated;
            self.buffer.push_parts(&obs, &action, out.reward, &out.obs, bootstrap)?;
            self.env_steps += 1;
            length += 1;
            ret += out.reward;
            obs = out.obs;
            if out.end.is_done() || self.is_finished() {
                break;
            }
        }
        self.episodes += 1;

        let mut acc = StatsAccumulator::default();
        let due = self.episodes.is_multiple_of(self.cfg.hyper.train_every_episodes);
        if due && self.env_steps > self.cfg.hyper.warmup_steps && self.buffer.len() >= self.cfg.hyper.batch_size {
            for _ in 0..length * self.cfg.hyper.train_every_episodes {
                let batch = self.buffer.sample(self.cfg.hyper.batch_size, &mut self.agent_rng)?;
                let stats = self
                    .agent
                    .update(&batch, &mut self.agent_rng)
                    .map_err(|source| TrainError::Diverged { env_steps: self.env_steps, source })?;
                acc.add(&stats);
            }
        }

        if self.recent.len() == ROLLING_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(ret);
        let row = TrainLogRow {
            env_step: self.env_steps,
            episode: self.episodes,
            episode_return: ret,
            rolling_mean_return: self.rolling_mean().unwrap_or(ret),
            alpha: self.agent.alpha(),
            entropy: acc.mean(|s| s.entropy),
            critic1_loss: acc.mean(|s| Some(s.critic1_loss)),
            critic2_loss: acc.mean(|s| Some(s.critic2_loss)),
            actor_loss: acc.mean(|s| s.actor_loss),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        sink.episode(&row).map_err(TrainError::Sink)?;
        Ok(row)
    }

    /// Deterministic evaluation on the probe set plus random starts drawn from
    /// this round's own stream.
    pub fn evaluate_now(&mut self, sink: &mut dyn TrainSink) -> Result<EvalReport, TrainError> {
        let mut rng = stream(self.cfg.seed, streams::EVAL_BASE + self.eval_rounds);
        let bounds = self.cfg.env.bounds();
        let mut inits = self.cfg.env.probes().to_vec();
        inits.extend((0..self.cfg.eval_episodes).map(|_| bounds.sample_position(&mut rng)));
        let report = evaluate(&self.agent, &self.model, &bounds, &inits, self.exec)?;
        let score = report.mean_return();
        let improved = self.best_eval_return.is_none_or(|b| score > b);
        if improved {
            self.best_eval_return = Some(score);
        }
        self.eval_rounds += 1;
        sink.evaluation(self.eval_rounds, &report, &self.snapshot(), improved).map_err(TrainError::Sink)?;
        Ok(report)
    }

    /// Runs whole episodes until at least `limit` env steps (or the budget)
    /// are reached, evaluating and checkpointing on schedule.
    pub fn run_until(&mut self, limit: u64, sink: &mut dyn TrainSink) -> Result<(), TrainError> {
        while self.env_steps < limit.min(self.cfg.total_steps) {
            let before = self.env_steps;
            self.run_episode(sink)?;
            let interval = self.cfg.eval_interval;
            if self.env_steps / interval > before / interval || self.is_finished() {
                self.evaluate_now(sink)?;
                sink.checkpoint(&self.snapshot()).map_err(TrainError::Sink)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self, sink: &mut dyn TrainSink) -> Result<RunSummary, TrainError> {
        self.run_until(self.cfg.total_steps, sink)?;
        Ok(RunSummary {
            env_steps: self.env_steps,
            episodes: self.episodes,
            updates: self.agent.update_count(),
            final_rolling_mean: self.rolling_mean(),
            best_eval_return: self.best_eval_return,
        })
    }
}

/// Trains `cfg` from scratch to its step budget.
pub fn run_scenario(cfg: ScenarioConfig, sink: &mut dyn TrainSink) -> Result<RunSummary, TrainError> {
    Trainer::new(cfg)?.run(sink)
}

#[derive(Default)]
struct StatsAccumulator {
    items: Vec<UpdateStats>,
}

impl StatsAccumulator {
    fn add(&mut self, s: &UpdateStats) {
        self.items.push(*s);
    }

    fn mean(&self, f: impl Fn(&UpdateStats) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.items.iter().filter_map(&f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
