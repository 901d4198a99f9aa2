//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `MEQ_ACCEPTANCE=quick` skips the long training criteria (7 to 10).
//! `MEQ_ACCEPTANCE_STRICT=1` turns any FAIL into a nonzero exit status.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use meq_cli::checkpoint;
use meq_cli::commands::{self, TrainArgs, BEST_CHECKPOINT, LATEST_CHECKPOINT, TRAIN_LOG};
use meq_core::agent::NetShape;
use meq_core::dynamics::{step, QuadModel, QuadState, RpmCommand};
use meq_core::env::{reward, ACT_DIM, OBS_DIM};
use meq_core::exec::Execution;
use meq_core::net::{grad_check, grad_check_sampled, min_abs_kink_distance, Activation, Mlp};
use meq_core::replay::{ReplayBuffer, StoragePrecision, Transition, TransitionBatch};
use meq_core::rng::stream;
use meq_core::sac::{squashed_log_density, EntropyConfig, EntropyMode, SacAgent, SacConfig};
use meq_core::trainer::{evaluate, EnvKind, Profile, RunSummary, Trainer};
use nalgebra::Vector3;
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn work_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Desk-profile preset runs, trained once and shared between criteria.
#[derive(Default)]
struct Runs {
    done: HashMap<(String, u64, &'static str), (PathBuf, RunSummary)>,
}

impl Runs {
    fn get(&mut self, scenario: &str, seed: u64, tag: &'static str) -> &(PathBuf, RunSummary) {
        self.done.entry((scenario.to_string(), seed, tag)).or_insert_with(|| {
            let out = work_dir().join(format!("{scenario}-s{seed}{tag}"));
            let _ = fs::remove_dir_all(&out);
            let args = TrainArgs {
                scenario: Some(scenario.to_string()),
                config: None,
                seed: Some(seed),
                steps: None,
                out: out.clone(),
                profile: Profile::Desk,
            };
            let t = Instant::now();
            let summary = commands::train(&args, true).unwrap_or_else(|e| panic!("{scenario} seed {seed}: {e}"));
            eprintln!("  trained {scenario} seed {seed}{tag} in {:.0} s", t.elapsed().as_secs_f64());
            (out, summary)
        })
    }
}

fn kink_free_input<R: Rng>(net: &Mlp, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        if min_abs_kink_distance(net, &x).unwrap() > 1e-4 {
            return x;
        }
    }
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = stream(11, 0);
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for shape in [NetShape::DESK, NetShape::PAPER] {
        let nets = [
            ("td3 actor", shape.actor(OBS_DIM, ACT_DIM, Activation::Tanh, &mut rng)),
            ("sac actor", shape.actor(OBS_DIM, 2 * ACT_DIM, Activation::Identity, &mut rng)),
            ("critic", shape.critic(OBS_DIM, ACT_DIM, &mut rng)),
        ];
        for (name, net) in nets {
            let mut err = 0.0_f64;
            for _ in 0..20 {
                let x = kink_free_input(&net, &mut rng);
                let e = if net.param_count() > 20_000 {
                    grad_check_sampled(&net, &x, 1e-5, 600).unwrap()
                } else {
                    grad_check(&net, &x, 1e-5).unwrap()
                };
                err = err.max(e);
            }
            worst = worst.max(err);
            parts.push(format!("{name} {:?} {err:.1e}", shape.hidden));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 60.0, format!("worst relative error {worst:.2e} in {secs:.1} s ({})", parts.join(", ")))
}

fn physics_oracles() -> Outcome {
    let m = QuadModel::default();
    let z0 = 10.0;
    let mut s = QuadState::at_rest(Vector3::new(0.0, 0.0, z0));
    let mut dev = 0.0_f64;
    for k in 1..=125 {
        s = step(&m, &s, &RpmCommand([0.0; 4]), m.dt_phys).unwrap();
        let t = k as f64 * m.dt_phys;
        dev = dev.max((s.position.z - (z0 - 0.5 * m.gravity * t * t)).abs());
    }
    let drop = 0.5 * m.gravity * 0.25;
    let fall_ok = dev < 0.01 * drop;

    let start = Vector3::new(0.3, -0.2, 1.0);
    let mut s = QuadState::at_rest(start);
    let h = m.hover_rpm();
    for _ in 0..250 {
        s = step(&m, &s, &RpmCommand([h; 4]), m.dt_phys).unwrap();
    }
    let drift = (s.position - start).norm();

    // Torque-free tumble at hover thrust; translation is reset so only attitude accumulates.
    let mut s = QuadState::at_rest(Vector3::zeros());
    s.angular_velocity = Vector3::new(3.0, -2.0, 5.0);
    let mut norm_err = 0.0_f64;
    for _ in 0..100_000 {
        s = step(&m, &s, &RpmCommand([h; 4]), m.dt_phys).unwrap();
        s.position = Vector3::zeros();
        s.velocity = Vector3::zeros();
        norm_err = norm_err.max((s.orientation.coords.norm() - 1.0).abs());
    }
    check(
        fall_ok && drift < 1e-3 && norm_err < 1e-9,
        format!("free-fall max deviation {:.2}% of drop, hover drift {drift:.2e} m, quaternion norm error {norm_err:.1e}", 100.0 * dev / drop),
    )
}

fn reward_oracle() -> Outcome {
    let (r05, r10) = (reward(0.5), reward(1.0));
    let (want05, want10) = (3.673_319_6, 0.898_727_4);
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for i in 0..10_000 {
        let e = 1e-3 + (6.0 - 1e-3) * i as f64 / 9_999.0;
        let r = reward(e);
        monotone &= r < prev;
        prev = r;
    }
    let ok05 = (r05 - want05).abs() <= 1e-6;
    let ok10 = (r10 - want10).abs() <= 1e-6;
    check(
        ok05 && ok10 && monotone,
        format!(
            "reward(0.5) = {r05:.7} (reference {want05}, off {:.1e}), reward(1.0) = {r10:.7} (reference {want10}, off {:.1e}), strictly decreasing: {monotone}",
            (r05 - want05).abs(),
            (r10 - want10).abs()
        ),
    )
}

fn tanh_gaussian_normalization() -> Outcome {
    let mut rng = stream(13, 0);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let mu = rng.random_range(-2.0..2.0);
        let log_std = rng.random_range(-1.5_f64..0.7);
        // Trapezoid in pre-squash space, change of variables back to action space.
        let sigma = log_std.exp();
        let (lo, hi, n) = (mu - 12.0 * sigma, mu + 12.0 * sigma, 400_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let u: f64 = lo + i as f64 * h;
            let a = u.tanh();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * squashed_log_density(u, mu, log_std).exp() * (1.0 - a * a) * h;
        }
        worst = worst.max((total - 1.0).abs());
    }
    check(worst < 1e-3, format!("worst |integral - 1| = {worst:.2e} over 20 (mu, sigma) pairs"))
}

fn temperature_closed_loop() -> Outcome {
    let t = Instant::now();
    let cfg = SacConfig {
        obs_dim: 1,
        act_dim: 1,
        shape: NetShape { hidden: [32, 32] },
        gamma: 0.99,
        tau: 0.005,
        lr: 7e-4,
        alpha_lr: 0.01,
        entropy: EntropyConfig { mode: EntropyMode::Dynamic { target_entropy: -1.0, initial_alpha: 1.0 }, exploration_noise: 0.0 },
    };
    let mut rng = stream(5, 1);
    let mut data = stream(5, 2);
    let mut agent = SacAgent::new(cfg, &mut rng);
    let mut min_alpha = f64::INFINITY;
    for _ in 0..2_000 {
        let items: Vec<Transition> = (0..256)
            .map(|_| {
                let a: f64 = data.random_range(-1.0..1.0);
                Transition { obs: vec![0.0], action: vec![a], reward: -a * a, next_obs: vec![0.0], bootstrap: false }
            })
            .collect();
        let stats = agent.update(&TransitionBatch::from_transitions(&items).unwrap(), &mut rng).unwrap();
        min_alpha = min_alpha.min(stats.alpha.unwrap()).min(agent.alpha());
    }
    let n = 20_000;
    let (mut sum_a, mut sum_logp) = (0.0, 0.0);
    for _ in 0..n {
        let (a, logp) = agent.policy_sample(&[0.0], &mut data).unwrap();
        sum_a += a[0];
        sum_logp += logp;
    }
    let entropy = -sum_logp / n as f64;
    let mean_a = sum_a / n as f64;
    let secs = t.elapsed().as_secs_f64();
    check(
        (entropy + 1.0).abs() < 0.5 && mean_a.abs() < 0.05 && min_alpha > 0.0 && secs < 120.0,
        format!("entropy {entropy:.3} (target -1), mean action {mean_a:.4}, final alpha {:.4}, min alpha {min_alpha:.2e}, {secs:.1} s", agent.alpha()),
    )
}

fn replay_uniformity() -> Outcome {
    let item = |k: usize| Transition {
        obs: vec![k as f64],
        action: vec![0.0],
        reward: k as f64,
        next_obs: vec![k as f64 + 1.0],
        bootstrap: k % 2 == 0,
    };
    let mut buf = ReplayBuffer::new(10, 1, 1, StoragePrecision::F64);
    for k in 0..10 {
        buf.push(&item(k)).unwrap();
    }
    let mut rng = stream(17, 0);
    let draws = 100_000;
    let mut counts = [0u64; 10];
    for _ in 0..draws / 10 {
        for i in buf.sample_indices(10, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom: mean 9, sd sqrt(18).
    let z = (chi2 - 9.0) / 18.0_f64.sqrt();

    let mut ring = ReplayBuffer::new(10, 1, 1, StoragePrecision::F64);
    let mut ring_ok = true;
    for k in 0..23 {
        ring.push(&item(k)).unwrap();
        ring_ok &= ring.len() == (k + 1).min(10);
    }
    for slot in 0..10 {
        // Items 13..23 survive; item k lives in slot k % 10.
        let k = if slot < 3 { 20 + slot } else { 10 + slot };
        ring_ok &= ring.get(slot) == Some(item(k));
    }
    ring_ok &= ring.get(10).is_none();
    check(z.abs() < 5.0 && ring_ok, format!("chi-square {chi2:.2} (z = {z:.2}), ring overwrite exact: {ring_ok}"))
}

fn log_without_wall_time(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

fn determinism(runs: &mut Runs) -> Outcome {
    let a = runs.get("small-sac", 1, "").0.clone();
    let b = runs.get("small-sac", 1, "-repeat").0.clone();
    let logs = log_without_wall_time(&a.join(TRAIN_LOG)) == log_without_wall_time(&b.join(TRAIN_LOG));
    let same = |name: &str| fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap();
    let (latest, best, evals) = (same(LATEST_CHECKPOINT), same(BEST_CHECKPOINT), same("eval_small-sac.csv"));
    check(
        logs && latest && best && evals,
        format!("train log {logs}, latest checkpoint {latest}, best checkpoint {best}, eval log {evals}"),
    )
}

fn scaled_ordering(runs: &mut Runs) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let sac = runs.get("small-sac", seed, "").1.final_rolling_mean.unwrap_or(f64::NEG_INFINITY);
        let td3 = runs.get("small-td3", seed, "").1.final_rolling_mean.unwrap_or(f64::NEG_INFINITY);
        wins += u32::from(sac >= td3);
        parts.push(format!("seed {seed}: SAC {sac:.1} vs TD3 {td3:.1}"));
    }
    check(wins >= 2, format!("SAC ahead in {wins}/3 ({})", parts.join("; ")))
}

fn scaled_stabilization(runs: &mut Runs) -> Outcome {
    let mut best: Option<(f64, u64, PathBuf)> = None;
    for seed in 1..=3 {
        let (dir, summary) = runs.get("small-sac", seed, "");
        let score = summary.best_eval_return.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, seed, dir.join(BEST_CHECKPOINT)));
        }
    }
    let (score, seed, path) = best.expect("three runs");
    let snap = checkpoint::load(&path).unwrap();
    let init = [-0.5, 0.5, 1.5];
    let report = evaluate(&snap.agent, &QuadModel::default(), &EnvKind::Small.bounds(), &[init], Execution::default()).unwrap();
    let ep = &report.episodes[0];
    check(
        ep.final_error < 0.1 && !ep.crashed,
        format!(
            "seed {seed} best policy (eval return {score:.1}, env step {}): final error {:.3} m, crashed {}",
            snap.env_steps, ep.final_error, ep.crashed
        ),
    )
}

fn noise_ablation(runs: &mut Runs) -> Outcome {
    let plain = runs.get("large-sac-dynamic", 1, "").1.final_rolling_mean.unwrap_or(f64::NEG_INFINITY);
    let noisy = runs.get("large-sac-dynamic-noise", 1, "").1.final_rolling_mean.unwrap_or(f64::NEG_INFINITY);
    check(plain >= noisy, format!("sigma 0: {plain:.1}, sigma 0.2: {noisy:.1} (single seed, directional)"))
}

fn checkpoint_round_trip() -> Outcome {
    let mut cfg = meq_core::trainer::preset("small-sac", Profile::Desk).unwrap();
    cfg.seed = 3;
    cfg.hyper.buffer_size = 50_000;
    cfg.eval_interval = 100_000;
    let mut sink = ();
    let mut first = Trainer::new(cfg).unwrap();
    first.run_until(12_000, &mut sink).unwrap();
    let split = first.env_steps();
    let path = work_dir().join("round-trip.meq");
    fs::create_dir_all(work_dir()).unwrap();
    checkpoint::save(&path, &first.snapshot()).unwrap();
    let buffer = first.buffer().clone();
    first.run_until(split + 1_000, &mut sink).unwrap();

    let mut resumed = Trainer::resume(checkpoint::load(&path).unwrap(), buffer).unwrap();
    resumed.run_until(split + 1_000, &mut sink).unwrap();

    let bits = |t: &Trainer| -> Vec<u64> {
        t.agent().networks().iter().flat_map(|n| n.slices().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    let params = bits(&first) == bits(&resumed);
    let state = checkpoint::encode(&first.snapshot()) == checkpoint::encode(&resumed.snapshot());
    check(
        params && state && resumed.env_steps() >= split + 1_000,
        format!("split at {split}, compared at {}: parameters identical {params}, full state identical {state}", resumed.env_steps()),
    )
}

fn main() {
    let quick = std::env::var("MEQ_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let strict = std::env::var("MEQ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut runs = Runs::default();
    type Criterion<'a> = (&'a str, Box<dyn FnMut(&mut Runs) -> Outcome>);
    let long = |f: fn(&mut Runs) -> Outcome| -> Box<dyn FnMut(&mut Runs) -> Outcome> {
        Box::new(move |r| if quick { Outcome::Skip("quick mode".into()) } else { f(r) })
    };
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(|_| gradient_fidelity())),
        ("physics oracles", Box::new(|_| physics_oracles())),
        ("reward oracle", Box::new(|_| reward_oracle())),
        ("tanh-Gaussian normalization", Box::new(|_| tanh_gaussian_normalization())),
        ("temperature closed loop", Box::new(|_| temperature_closed_loop())),
        ("replay uniformity", Box::new(|_| replay_uniformity())),
        ("determinism", long(determinism)),
        ("scaled ordering", long(scaled_ordering)),
        ("scaled stabilization", long(scaled_stabilization)),
        ("noise-ablation direction", long(noise_ablation)),
        ("checkpoint round trip", Box::new(|_| checkpoint_round_trip())),
    ];
    let mut failed = 0;
    for (i, (name, mut run)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match run(&mut runs) {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} {tag} {name}: {detail} [{:.0} s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {failed} of 11 criteria failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
