//! Batch experiment runner: entropy evaluation, multigoal training and
//! evaluation, and the obstacle robustness probe. No interactive UI; runs
//! write their artifacts into the output directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use s2ac_core::config::{preset, ExperimentConfig, ExperimentKind, PRESETS};
use s2ac_core::experiments;
use s2ac_core::Error;

#[derive(Parser)]
#[command(name = "s2ac", version, about = "Particle-sampler entropy experiments and the Stein soft actor-critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long, value_parser = PRESETS.to_vec(), conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's out_dir or ./runs/<kind>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy estimation over sampler/parameter grids.
    EntropyEval(RunArgs),
    /// Train agents on the 2-D multigoal environment.
    TrainMultigoal(RunArgs),
    /// Evaluate trained checkpoints in the plain environment.
    EvalMultigoal(RunArgs),
    /// Evaluate trained checkpoints with the obstacle enabled.
    Robustness(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::EntropyEval(_) => ExperimentKind::EntropyEval,
            Command::TrainMultigoal(_) => ExperimentKind::TrainMultigoal,
            Command::EvalMultigoal(_) => ExperimentKind::EvalMultigoal,
            Command::Robustness(_) => ExperimentKind::Robustness,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::EntropyEval(a)
            | Command::TrainMultigoal(a)
            | Command::EvalMultigoal(a)
            | Command::Robustness(a) => a,
        }
    }
}

fn load_config(args: &RunArgs, kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::Config("pass --config PATH or --preset NAME".into()))
        }
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    if cfg.experiment.kind != kind {
        return Err(Error::Config(format!(
            "config is a {} experiment but the {} subcommand was invoked",
            cfg.experiment.kind, kind
        )));
    }
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.experiment.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.kind.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = cli.command.kind();
    let args = cli.command.args();

    let cfg = match load_config(args, kind) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = out_dir(args, &cfg);

    match experiments::run(&cfg, &dir) {
        Ok(()) => {
            println!("run complete: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) | Err(e @ Error::MissingCheckpoint(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e @ Error::NanAbort { .. }) | Err(e @ Error::Divergence { .. }) => {
            eprintln!("numeric abort: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
