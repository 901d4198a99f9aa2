use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meq_cli::tables::{TRAIN_LOG_HEADER, TRAJECTORY_HEADER};
use meq_core::agent::NetShape;
use meq_core::trainer::{preset, Profile, ScenarioConfig, PRESET_NAMES};

fn meq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meq")).args(args).env_remove("MEQ_SEED").output().unwrap()
}

fn tiny_config(name: &str) -> ScenarioConfig {
    let mut cfg = preset(name, Profile::Desk).unwrap();
    cfg.net = NetShape { hidden: [8, 8] };
    cfg.hyper.warmup_steps = 500;
    cfg.hyper.batch_size = 16;
    cfg.hyper.buffer_size = 4_000;
    cfg.total_steps = 1_200;
    cfg.eval_interval = 600;
    cfg.eval_episodes = 1;
    cfg
}

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(format!("{}.json", cfg.name));
    fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path
}

fn train_tiny(dir: &Path, name: &str, out: &str) -> PathBuf {
    let cfg = write_config(dir, &tiny_config(name));
    let out = dir.join(out);
    let o = meq(&["train", "--config", cfg.to_str().unwrap(), "--seed", "1", "--quiet", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn without_wall_time(path: &Path) -> Vec<Vec<String>> {
    csv_rows(path).into_iter().map(|mut r| {
        r.pop();
        r
    }).collect()
}

#[test]
fn preset_run_writes_log_with_header() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs/a");
    let o = meq(&[
        "train", "--scenario", "large-sac-dynamic", "--seed", "1", "--profile", "desk", "--steps", "10000", "--quiet", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("train_log.csv"));
    assert_eq!(rows[0], TRAIN_LOG_HEADER);
    assert!(rows.len() > 1);
    assert!(out.join("config.json").exists());
    assert!(out.join("checkpoint.meq").exists());
    assert!(!out.join(".meq.lock").exists());
}

#[test]
fn unknown_scenario_lists_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let o = meq(&["train", "--scenario", "nope", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in PRESET_NAMES {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn unwritable_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let out = file.join("sub");
    let o = meq(&["train", "--scenario", "small-td3", "--steps", "10000", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join(".meq.lock"), "1").unwrap();
    let o = meq(&["train", "--scenario", "small-td3", "--steps", "10000", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn repeated_runs_give_identical_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train_tiny(tmp.path(), "small-sac", "a");
    let b = train_tiny(tmp.path(), "small-sac", "b");
    assert_eq!(without_wall_time(&a.join("train_log.csv")), without_wall_time(&b.join("train_log.csv")));
    assert_eq!(fs::read(a.join("checkpoint.meq")).unwrap(), fs::read(b.join("checkpoint.meq")).unwrap());
    assert_eq!(fs::read(a.join("eval_small-sac.csv")).unwrap(), fs::read(b.join("eval_small-sac.csv")).unwrap());
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_meq"))
        .args(["train", "--scenario", "small-td3", "--steps", "10000", "--quiet", "--out", out.to_str().unwrap()])
        .env("MEQ_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg: ScenarioConfig = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg.seed, 77);
}

#[test]
fn csv_files_have_headers_and_constant_width() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_tiny(tmp.path(), "small-td3", "run");
    for name in ["train_log.csv", "eval_small-td3.csv"] {
        let rows = csv_rows(&run.join(name));
        assert!(rows[0].iter().all(|h| h.parse::<f64>().is_err()), "{name}");
        assert!(rows.iter().all(|r| r.len() == rows[0].len()), "{name}");
    }
}

#[test]
fn eval_writes_probe_trajectories_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_tiny(tmp.path(), "small-sac", "run");
    let out = tmp.path().join("eval");
    let ckpt = run.join("checkpoint.meq");
    let o = meq(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--probes", "small", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 1..=3 {
        let rows = csv_rows(&out.join(format!("trajectory_{i}.csv")));
        assert_eq!(rows[0], TRAJECTORY_HEADER);
        assert!(rows.iter().all(|r| r.len() == TRAJECTORY_HEADER.len()));
    }
    assert!(!out.join("trajectory_4.csv").exists());
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 4);
    assert_eq!(&summary[1][..3], &["-5.0000000000000000e-1", "5.0000000000000000e-1", "1.5000000000000000e0"]);

    let out2 = tmp.path().join("eval2");
    let o = meq(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--init", "0,0,1", "--init", "-1, 0.5, 2", "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out2.join("summary.csv")).len(), 3);
}

#[test]
fn bad_checkpoints_exit_4_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_tiny(tmp.path(), "small-td3", "run");
    let bytes = fs::read(run.join("checkpoint.meq")).unwrap();
    let cases = [("truncated.meq", bytes[..bytes.len() / 2].to_vec()), ("magic.meq", [b"XXXX".as_slice(), &bytes[4..]].concat()), ("version.meq", {
        let mut b = bytes.clone();
        b[4] = 9;
        b
    })];
    for (name, data) in cases {
        let path = tmp.path().join(name);
        fs::write(&path, data).unwrap();
        let out = tmp.path().join(format!("out-{name}"));
        let o = meq(&["eval", "--checkpoint", path.to_str().unwrap(), "--probes", "small", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(4), "{name}");
        assert!(!out.exists(), "{name}");
    }
}

#[test]
fn malformed_init_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = meq(&["eval", "--checkpoint", "missing.meq", "--init", "1,2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(64));
}

fn write_log(path: &Path, rows: usize, sac: bool) {
    let mut text = TRAIN_LOG_HEADER.join(",") + "\n";
    for i in 0..rows {
        let opt = if sac { format!("{}", 0.5 + i as f64) } else { String::new() };
        text += &format!("{},{},{},{},{opt},{opt},1.0,1.0,-2.0,0.1\n", (i + 1) * 300, i + 1, i as f64, i as f64 / 2.0);
    }
    fs::write(path, text).unwrap();
}

#[test]
fn export_small_log_keeps_every_row() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.csv");
    write_log(&log, 10, true);
    let out = tmp.path().join("curves/c.csv");
    let o = meq(&["export-curves", "--log", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["env_step", "rolling_mean_return", "alpha", "entropy"]);
    let steps: Vec<u64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(steps, (1..=10).map(|i| i * 300).collect::<Vec<u64>>());
    assert!(rows[1..].iter().all(|r| !r[2].is_empty()));
}

#[test]
fn export_td3_log_leaves_entropy_columns_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.csv");
    write_log(&log, 5000, false);
    let out = tmp.path().join("c.csv");
    assert!(meq(&["export-curves", "--log", log.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let rows = csv_rows(&out);
    assert!(rows.len() - 1 <= 2000);
    assert!(rows[1..].iter().all(|r| r[2].is_empty() && r[3].is_empty()));
    let steps: Vec<u64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn export_malformed_log_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.csv");
    write_log(&log, 4, true);
    let mut text = fs::read_to_string(&log).unwrap();
    text = text.replacen("900,3,2,1", "900,3,oops,1", 1);
    fs::write(&log, text).unwrap();
    let o = meq(&["export-curves", "--log", log.to_str().unwrap(), "--out", tmp.path().join("c.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}
