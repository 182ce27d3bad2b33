//! `canloc`: generate traces, train and evaluate the models, and monitor a
//! recorded bus.

mod commands;
mod tasks;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use canloc_core::config::{Settings, SEED_ENV};
use canloc_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "canloc", version, about = "Physical-layer CAN intrusion detection, localisation and authentication")]
struct Cli {
    /// Flat `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand; unset flags fall back to the file.
#[derive(Args, Debug, Default, Clone)]
struct Common {
    #[arg(long)]
    network: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "sample-rate")]
    sample_rate: Option<String>,
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    attacker: Option<String>,
    /// The intruder transmits spoofed frames.
    #[arg(long)]
    active: bool,
    /// Augmented copies per signal.
    #[arg(long)]
    k: Option<String>,
    /// Largest roll offset of an augmented copy.
    #[arg(long)]
    r: Option<String>,
    /// Monitoring period in seconds.
    #[arg(long)]
    tp: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs = [
            ("network", &self.network),
            ("frames", &self.frames),
            ("seed", &self.seed),
            ("sample_rate", &self.sample_rate),
            ("channel", &self.channel),
            ("attacker", &self.attacker),
            ("k", &self.k),
            ("r", &self.r),
            ("tp", &self.tp),
            ("noise", &self.noise),
            ("out", &self.out),
        ];
        let mut out: Vec<_> = pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect();
        if self.active {
            out.push(("active", "true".into()));
        }
        out
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a campaign and write it as a trace file.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model (detector, localizer or auth) from trace files.
    Train {
        task: String,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Caps the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained model on labelled traces.
    Eval {
        task: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Exit with status 3 when any FRR exceeds this.
        #[arg(long = "max-frr")]
        max_frr: Option<f64>,
        /// Exit with status 3 when any FAR exceeds this.
        #[arg(long = "max-far")]
        max_far: Option<f64>,
        /// Exit with status 3 when the accuracy falls below this.
        #[arg(long = "min-accuracy")]
        min_accuracy: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Monitor a recorded bus and print alerts as JSON lines.
    Run {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        localizer: PathBuf,
        #[arg(long)]
        auth: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Start-up vote as `k/n`.
        #[arg(long)]
        vote: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    Threshold(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Threshold(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Self::Usage(m),
            e => Self::Data(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage: {m}"),
            Self::Data(e) => write!(f, "data: {e}"),
            Self::Threshold(m) => write!(f, "threshold: {m}"),
        }
    }
}

fn settings(config: Option<&PathBuf>, common: &Common) -> Result<Settings, CliError> {
    let text = config
        .map(|p| std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))))
        .transpose()?;
    let env_seed = std::env::var(SEED_ENV).ok();
    Ok(Settings::resolve(text.as_deref(), env_seed.as_deref(), &common.overrides())?)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.as_ref();
    match cli.command {
        Command::Gen { common } => commands::gen(&settings(cfg, &common)?),
        Command::Train {
            task,
            data,
            epochs,
            common,
        } => commands::train(&task, &data, epochs, &settings(cfg, &common)?),
        Command::Eval {
            task,
            model,
            data,
            max_frr,
            max_far,
            min_accuracy,
            common,
        } => {
            let limits = commands::Limits {
                max_frr,
                max_far,
                min_accuracy,
            };
            commands::eval(&task, &model, &data, &limits, &settings(cfg, &common)?)
        }
        Command::Run {
            detector,
            localizer,
            auth,
            data,
            vote,
            common,
        } => {
            let models = commands::RunModels {
                detector,
                localizer,
                auth,
            };
            commands::run(&models, &data, vote.as_deref(), &settings(cfg, &common)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("canloc: {e}");
            ExitCode::from(e.code())
        }
    }
}
