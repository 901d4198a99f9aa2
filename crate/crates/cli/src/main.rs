use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use meq_cli::commands::{self, CliError, EvalArgs, TrainArgs, EXIT_USAGE};
use meq_core::trainer::{EnvKind, Profile};

#[derive(Parser)]
#[command(name = "meq", version, about = "Train and evaluate TD3/SAC quadcopter hover agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    Small,
    Large,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset scenario or a JSON config.
    Train {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        scenario: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "MEQ_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        /// Suppress progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Run noiseless episodes from a checkpoint and write trajectories.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Initial position "x,y,z"; repeatable.
        #[arg(long = "init", allow_hyphen_values = true)]
        inits: Vec<String>,
        #[arg(long, value_enum)]
        probes: Option<ProbeArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downsample a training log into plot-ready curves.
    ExportCurves {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { scenario, config, seed, steps, out, profile, quiet } => {
            let profile = match profile {
                ProfileArg::Desk => Profile::Desk,
                ProfileArg::Paper => Profile::Paper,
            };
            let args = TrainArgs { scenario, config, seed, steps, out, profile };
            let s = commands::train(&args, quiet)?;
            println!(
                "done: {} env steps, {} episodes, {} updates, final rolling mean {}",
                s.env_steps,
                s.episodes,
                s.updates,
                s.final_rolling_mean.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Eval { checkpoint, inits, probes, out } => {
            let probes = probes.map(|p| match p {
                ProbeArg::Small => EnvKind::Small,
                ProbeArg::Large => EnvKind::Large,
            });
            let report = commands::eval(&EvalArgs { checkpoint, inits, probes, out })?;
            for ep in &report.episodes {
                println!(
                    "init ({}, {}, {}): final error {:.4} m, return {:.2}, steps {}{}",
                    ep.init[0],
                    ep.init[1],
                    ep.init[2],
                    ep.final_error,
                    ep.episode_return,
                    ep.steps,
                    if ep.crashed { ", crashed" } else { "" }
                );
            }
        }
        Command::ExportCurves { log, out } => {
            let n = commands::export_curves(&log, &out)?;
            println!("wrote {n} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
