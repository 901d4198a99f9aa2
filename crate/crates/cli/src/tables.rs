//! CSV schemas for training logs, curves, trajectories and eval summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use meq_core::trainer::{EvalEpisode, TrainLogRow};
use thiserror::Error;

pub const TRAIN_LOG_HEADER: [&str; 10] = [
    "env_step",
    "episode",
    "episode_return",
    "rolling_mean_return",
    "alpha",
    "entropy",
    "critic1_loss",
    "critic2_loss",
    "actor_loss",
    "wall_time_s",
];

pub const CURVES_HEADER: [&str; 4] = ["env_step", "rolling_mean_return", "alpha", "entropy"];

pub const TRAJECTORY_HEADER: [&str; 21] = [
    "step", "time_s", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz", "a1", "a2", "a3", "a4", "reward", "error", "crashed",
];

pub const SUMMARY_HEADER: [&str; 7] = ["init_x", "init_y", "init_z", "final_error", "episode_return", "crashed", "steps"];

pub const MAX_CURVE_ROWS: usize = 2000;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 17 significant digits; parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn train_log_record(r: &TrainLogRow) -> Vec<String> {
    vec![
        r.env_step.to_string(),
        r.episode.to_string(),
        fmt_f64(r.episode_return),
        fmt_f64(r.rolling_mean_return),
        opt(r.alpha),
        opt(r.entropy),
        opt(r.critic1_loss),
        opt(r.critic2_loss),
        opt(r.actor_loss),
        fmt_f64(r.wall_time_s),
    ]
}

/// Appends rows to `train_log.csv`, flushing after each one.
pub struct TrainLogWriter {
    inner: csv::Writer<File>,
}

impl TrainLogWriter {
    pub fn create(path: &Path) -> Result<Self, TableError> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(TRAIN_LOG_HEADER)?;
        inner.flush()?;
        Ok(TrainLogWriter { inner })
    }

    pub fn write(&mut self, row: &TrainLogRow) -> Result<(), TableError> {
        self.inner.write_record(train_log_record(row))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogRow>, TableError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut rows = Vec::new();
    let mut records = reader.records();
    let bad = |line: u64, message: String| TableError::Malformed { line, message };
    match records.next() {
        Some(Ok(h)) if h.iter().eq(TRAIN_LOG_HEADER) => {}
        Some(Ok(_)) => return Err(bad(1, "unexpected header".into())),
        Some(Err(e)) => return Err(bad(1, e.to_string())),
        None => return Err(bad(1, "empty file".into())),
    }
    let mut last_step = None;
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            bad(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != TRAIN_LOG_HEADER.len() {
            return Err(bad(line, format!("expected {} fields, found {}", TRAIN_LOG_HEADER.len(), rec.len())));
        }
        let field = |i: usize| rec.get(i).expect("length checked");
        let float = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| bad(line, format!("column {} is not a number: {:?}", TRAIN_LOG_HEADER[i], field(i))))
        };
        let optional = |i: usize| if field(i).is_empty() { Ok(None) } else { float(i).map(Some) };
        let int = |i: usize| {
            field(i)
                .parse::<u64>()
                .map_err(|_| bad(line, format!("column {} is not an integer: {:?}", TRAIN_LOG_HEADER[i], field(i))))
        };
        let row = TrainLogRow {
            env_step: int(0)?,
            episode: int(1)?,
            episode_return: float(2)?,
            rolling_mean_return: float(3)?,
            alpha: optional(4)?,
            entropy: optional(5)?,
            critic1_loss: optional(6)?,
            critic2_loss: optional(7)?,
            actor_loss: optional(8)?,
            wall_time_s: float(9)?,
        };
        if last_step.is_some_and(|s| row.env_step <= s) {
            return Err(bad(line, "env_step does not increase".into()));
        }
        last_step = Some(row.env_step);
        rows.push(row);
    }
    Ok(rows)
}

/// At most `max` indices into `0..n`, evenly spread, first and last kept.
pub fn downsample(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    if max <= 1 {
        return (0..max.min(n)).map(|_| n - 1).collect();
    }
    (0..max).map(|i| i * (n - 1) / (max - 1)).collect()
}

pub fn write_curves(rows: &[TrainLogRow], path: &Path) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVES_HEADER)?;
    for i in downsample(rows.len(), MAX_CURVE_ROWS) {
        let r = &rows[i];
        w.write_record([r.env_step.to_string(), fmt_f64(r.rolling_mean_return), opt(r.alpha), opt(r.entropy)])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn trajectory_bytes(ep: &EvalEpisode) -> Result<Vec<u8>, TableError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    let last = ep.trajectory.len().saturating_sub(1);
    for (i, p) in ep.trajectory.iter().enumerate() {
        let mut rec = vec![p.step.to_string(), fmt_f64(p.time_s)];
        rec.extend(p.position.iter().chain(&p.velocity).chain(&p.euler).chain(&p.angular_velocity).map(|v| fmt_f64(*v)));
        match p.action {
            Some(a) => rec.extend(a.iter().map(|v| fmt_f64(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.push(opt(p.reward));
        rec.push(fmt_f64(p.error));
        rec.push(u8::from(ep.crashed && i == last).to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| TableError::Io(e.into_error()))
}

pub fn summary_record(ep: &EvalEpisode) -> Vec<String> {
    vec![
        fmt_f64(ep.init[0]),
        fmt_f64(ep.init[1]),
        fmt_f64(ep.init[2]),
        fmt_f64(ep.final_error),
        fmt_f64(ep.episode_return),
        u8::from(ep.crashed).to_string(),
        ep.steps.to_string(),
    ]
}

pub fn summary_bytes(episodes: &[EvalEpisode]) -> Result<Vec<u8>, TableError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for ep in episodes {
        w.write_record(summary_record(ep))?;
    }
    w.into_inner().map_err(|e| TableError::Io(e.into_error()))
}
