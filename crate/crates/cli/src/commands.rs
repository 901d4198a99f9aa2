//! The `train`, `eval` and `export-curves` subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use meq_core::dynamics::QuadModel;
use meq_core::exec::Execution;
use meq_core::trainer::{
    evaluate, preset, EnvKind, EvalReport, Profile, RunSummary, ScenarioConfig, SinkError, Snapshot, TrainError, TrainLogRow, TrainSink,
    Trainer, PRESET_NAMES,
};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::tables::{self, TableError, TrainLogWriter};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_UNKNOWN_SCENARIO: u8 = 2;
pub const EXIT_UNWRITABLE: u8 = 3;
pub const EXIT_BAD_CHECKPOINT: u8 = 4;
pub const EXIT_MALFORMED_LOG: u8 = 5;
pub const EXIT_USAGE: u8 = 64;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const CONFIG_ECHO: &str = "config.json";
pub const LATEST_CHECKPOINT: &str = "checkpoint.meq";
pub const BEST_CHECKPOINT: &str = "best.meq";
pub const SUMMARY: &str = "summary.csv";
const LOCKFILE: &str = ".meq.lock";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown scenario `{name}`; available presets:\n  {}", PRESET_NAMES.join("\n  "))]
    UnknownScenario { name: String },
    #[error("cannot write to {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },
    #[error("bad checkpoint {path}: {source}")]
    BadCheckpoint { path: PathBuf, source: CheckpointError },
    #[error("malformed log {path}: {source}")]
    MalformedLog { path: PathBuf, source: TableError },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::UnknownScenario { .. } => EXIT_UNKNOWN_SCENARIO,
            CliError::Unwritable { .. } => EXIT_UNWRITABLE,
            CliError::BadCheckpoint { .. } => EXIT_BAD_CHECKPOINT,
            CliError::MalformedLog { .. } => EXIT_MALFORMED_LOG,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Unwritable { path: path.to_path_buf(), reason: e.to_string() }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| unwritable(root, e))?;
        let lock = root.join(LOCKFILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputDir { root: root.to_path_buf() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(unwritable(root, format!("another run holds {}", lock.display())))
            }
            Err(e) => Err(unwritable(root, e)),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        File::create(&path).and_then(|mut f| f.write_all(bytes)).map_err(|e| unwritable(&path, e))
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCKFILE));
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub scenario: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: PathBuf,
    pub profile: Profile,
}

pub fn resolve_config(args: &TrainArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match (&args.scenario, &args.config) {
        (Some(name), None) => preset(name, args.profile).map_err(|e| match e {
            TrainError::UnknownScenario { name } => CliError::UnknownScenario { name },
            other => CliError::Failed(other.to_string()),
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        _ => return Err(CliError::Usage("pass exactly one of --scenario or --config".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

struct FileSink<'a> {
    dir: &'a OutputDir,
    log: TrainLogWriter,
    eval_log: csv::Writer<File>,
    quiet: bool,
}

impl TrainSink for FileSink<'_> {
    fn episode(&mut self, row: &TrainLogRow) -> Result<(), SinkError> {
        Ok(self.log.write(row)?)
    }

    fn evaluation(&mut self, round: u64, report: &EvalReport, state: &Snapshot, improved: bool) -> Result<(), SinkError> {
        for ep in &report.episodes {
            let mut rec = vec![round.to_string(), state.env_steps.to_string()];
            rec.extend(tables::summary_record(ep));
            self.eval_log.write_record(&rec)?;
        }
        self.eval_log.flush()?;
        if improved {
            checkpoint::save(&self.dir.path(BEST_CHECKPOINT), state)?;
        }
        if !self.quiet {
            eprintln!(
                "[eval {round}] env_step {} mean return {:.1}{}",
                state.env_steps,
                report.mean_return(),
                if improved { " (best)" } else { "" }
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, snapshot: &Snapshot) -> Result<(), SinkError> {
        Ok(checkpoint::save(&self.dir.path(LATEST_CHECKPOINT), snapshot)?)
    }
}

pub fn train(args: &TrainArgs, quiet: bool) -> Result<RunSummary, CliError> {
    let cfg = resolve_config(args)?;
    let dir = OutputDir::acquire(&args.out)?;
    let echo = serde_json::to_string_pretty(&cfg).expect("config serializes");
    dir.write(CONFIG_ECHO, format!("{echo}\n").as_bytes())?;
    let log_path = dir.path(TRAIN_LOG);
    let log = TrainLogWriter::create(&log_path).map_err(|e| unwritable(&log_path, e))?;
    let eval_path = dir.path(&format!("eval_{}.csv", cfg.name));
    let mut eval_log = csv::Writer::from_path(&eval_path).map_err(|e| unwritable(&eval_path, e))?;
    let mut header = vec!["eval_round", "env_step"];
    header.extend(tables::SUMMARY_HEADER);
    eval_log.write_record(&header).map_err(|e| unwritable(&eval_path, e))?;

    let mut sink = FileSink { dir: &dir, log, eval_log, quiet };
    let mut trainer = Trainer::new(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    match trainer.run(&mut sink) {
        Ok(summary) => Ok(summary),
        Err(TrainError::Sink(e)) => Err(unwritable(&args.out, e)),
        Err(e @ TrainError::Diverged { .. }) => Err(CliError::Failed(format!(
            "{e}; last good checkpoint: {}",
            dir.path(LATEST_CHECKPOINT).display()
        ))),
        Err(e) => Err(CliError::Failed(e.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub inits: Vec<String>,
    pub probes: Option<EnvKind>,
    pub out: PathBuf,
}

pub fn parse_position(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let values: Vec<f64> = parts.iter().filter_map(|p| p.parse::<f64>().ok()).filter(|v| v.is_finite()).collect();
    match <[f64; 3]>::try_from(values) {
        Ok(v) if parts.len() == 3 => Ok(v),
        _ => Err(CliError::Usage(format!("--init expects \"x,y,z\", got {text:?}"))),
    }
}

/// Loads and evaluates everything before the output directory is touched.
pub fn eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let mut inits = args.inits.iter().map(|s| parse_position(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(kind) = args.probes {
        inits.extend_from_slice(kind.probes());
    }
    if inits.is_empty() {
        return Err(CliError::Usage("pass --init or --probes".into()));
    }
    let snap = checkpoint::load(&args.checkpoint).map_err(|source| CliError::BadCheckpoint { path: args.checkpoint.clone(), source })?;
    let report = evaluate(&snap.agent, &QuadModel::default(), &snap.config.env.bounds(), &inits, Execution::default())
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let files = report
        .episodes
        .iter()
        .map(tables::trajectory_bytes)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let summary = tables::summary_bytes(&report.episodes).map_err(|e| CliError::Failed(e.to_string()))?;

    let dir = OutputDir::acquire(&args.out)?;
    for (i, bytes) in files.iter().enumerate() {
        dir.write(&format!("trajectory_{}.csv", i + 1), bytes)?;
    }
    dir.write(SUMMARY, &summary)?;
    Ok(report)
}

pub fn export_curves(log: &Path, out: &Path) -> Result<usize, CliError> {
    let rows = tables::read_train_log(log).map_err(|e| match e {
        TableError::Io(io) => CliError::Failed(format!("cannot read {}: {io}", log.display())),
        source => CliError::MalformedLog { path: log.to_path_buf(), source },
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| unwritable(parent, e))?;
    }
    tables::write_curves(&rows, out).map_err(|e| unwritable(out, e))?;
    Ok(rows.len().min(tables::MAX_CURVE_ROWS))
}
