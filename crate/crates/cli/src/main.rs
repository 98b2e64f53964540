use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use phaseret::commands::{self, DenoiserChoice};
use phaseret::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "phaseret", version, about = "Phase retrieval from Fourier magnitudes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    work_dir: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of refinement steps.
    #[arg(long = "T")]
    steps: Option<usize>,
    /// Number of combined runs when aggregating.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    transform: Option<String>,
    #[arg(long)]
    shift_search: bool,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct DenoiserArgs {
    /// Use each record's ground truth as the denoiser (test harness).
    #[arg(long)]
    oracle_denoiser: bool,
}

impl DenoiserArgs {
    fn choice(&self) -> DenoiserChoice {
        if self.oracle_denoiser {
            DenoiserChoice::Oracle
        } else {
            DenoiserChoice::Trained
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate targets and noisy measurements.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Use the 8-bit PGM files of this directory as targets.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Build the initialization ensemble of every record.
    Init {
        #[command(flatten)]
        common: Common,
    },
    /// Train the denoiser on targets and their ensembles.
    TrainDenoiser {
        #[command(flatten)]
        common: Common,
    },
    /// Refine every record once.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        denoiser: DenoiserArgs,
        /// Also write every intermediate iterate.
        #[arg(long)]
        snapshots: bool,
    },
    /// Average several refinements per record, with their transformed twins.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        denoiser: DenoiserArgs,
    },
    /// Fit the uncertainty calibration and report coverage.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Score reconstructions against the targets.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Init, reconstruct, aggregate when configured, and eval.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        denoiser: DenoiserArgs,
    },
}

fn load(c: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(v) = &c.work_dir {
        cfg.work_dir = v.clone();
    }
    if let Some(v) = c.alpha {
        overrides.push(("alpha".into(), v.to_string()));
    }
    if let Some(v) = c.steps {
        overrides.push(("refine.steps".into(), v.to_string()));
    }
    if let Some(v) = c.p {
        overrides.push(("aggregate.p".into(), v.to_string()));
    }
    if let Some(v) = c.seed {
        overrides.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = &c.transform {
        overrides.push(("aggregate.transform".into(), v.clone()));
    }
    if c.shift_search {
        overrides.push(("eval.shift_search".into(), "true".into()));
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
        overrides.push((k.trim().into(), v.trim().into()));
    }
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { common, images } => commands::synth(&load(common)?, images.as_deref()),
        Command::Init { common } => commands::init(&load(common)?),
        Command::TrainDenoiser { common } => commands::train_denoiser(&load(common)?),
        Command::Reconstruct {
            common,
            denoiser,
            snapshots,
        } => commands::reconstruct(&load(common)?, denoiser.choice(), *snapshots),
        Command::Aggregate { common, denoiser } => commands::aggregate_cmd(&load(common)?, denoiser.choice()),
        Command::Calibrate { common } => commands::calibrate_cmd(&load(common)?),
        Command::Eval { common } => commands::eval(&load(common)?),
        Command::Run { common, denoiser } => commands::run(&load(common)?, denoiser.choice()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
