//! `xbarsim`: dataset building, training, crossbar simulation, sweeps and
//! hardware cost reports driven by one TOML config file.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xbarsim::synth::{EdfFixtureConfig, ToyConfig};
use xbarsim::{ReadoutMode, StateCount, WeightScheme};

use commands::{SimulateArgs, SweepArgs, SynthArgs, SynthKind};
use config::RunConfig;

/// A bad invocation or config; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "xbarsim",
    version,
    about = "Memristive crossbar simulator for EEG seizure prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `paths.output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output_dir {
            cfg.paths.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Tdm,
    Parallel,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Toy,
    Edf,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy spectrogram dataset and synthetic EDF fixtures.
    SynthData {
        /// Output directory; receives `toy/`, `edf/` and sample configs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        kind: KindArg,
        /// Toy windows per class.
        #[arg(long, default_value_t = ToyConfig::default().per_class)]
        per_class: usize,
        /// Toy window length in seconds.
        #[arg(long, default_value_t = ToyConfig::default().window_secs)]
        window_secs: usize,
        /// Seed for both generators.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the labeled spectrogram dataset from EDF recordings.
    Preprocess(ConfigArgs),
    /// Train one network per stratified fold.
    Train(ConfigArgs),
    /// Evaluate trained folds on simulated crossbars.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// R_ON standard deviation in ohm (overrides `device.sigma`).
        #[arg(long)]
        sigma: Option<f64>,
        /// Conductance states, 2 or more, or `continuous` (overrides `device.n_states`).
        #[arg(long)]
        states: Option<StateCount>,
        /// `double` or `single` (overrides `mapping.scheme`).
        #[arg(long)]
        scheme: Option<WeightScheme>,
        /// Output CSV (default `<output_dir>/simulate.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every sigma × states × seed cell on every fold.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated sigmas (overrides `sweep.sigmas`).
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        /// Comma-separated state counts (overrides `sweep.states`).
        #[arg(long, value_delimiter = ',')]
        states: Option<Vec<StateCount>>,
        /// Comma-separated seeds (overrides `sweep.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        scheme: Option<WeightScheme>,
    },
    /// Power, area, latency and energy of the crossbar implementation.
    Cost {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Count separate positive and negative columns when sizing tiles.
        #[arg(long)]
        strict_double_column: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthData {
            out,
            kind,
            per_class,
            window_secs,
            seed,
        } => {
            let mut toy = ToyConfig {
                per_class,
                window_secs,
                ..Default::default()
            };
            let mut edf = EdfFixtureConfig::default();
            if let Some(s) = seed {
                toy.seed = s;
                edf.seed = s;
            }
            if window_secs < 22 {
                return Err(UsageError(format!("--window-secs {window_secs}: the network needs at least 22")).into());
            }
            let kind = match kind {
                KindArg::Toy => SynthKind::Toy,
                KindArg::Edf => SynthKind::Edf,
                KindArg::All => SynthKind::All,
            };
            commands::synth_data(&SynthArgs { out, kind, toy, edf })
        }
        Command::Preprocess(c) => commands::preprocess(&c.load()?),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Simulate {
            config,
            sigma,
            states,
            scheme,
            out,
        } => commands::simulate(
            &config.load()?,
            &SimulateArgs {
                sigma,
                states,
                scheme,
                out,
            },
        ),
        Command::Sweep {
            config,
            sigmas,
            states,
            seeds,
            scheme,
        } => commands::run_sweep(
            &config.load()?,
            &SweepArgs {
                sigmas,
                states,
                seeds,
                scheme,
            },
        ),
        Command::Cost {
            config,
            mode,
            strict_double_column,
        } => {
            let modes = match mode {
                ModeArg::Tdm => vec![ReadoutMode::Tdm],
                ModeArg::Parallel => vec![ReadoutMode::Parallelized],
                ModeArg::Both => vec![ReadoutMode::Tdm, ReadoutMode::Parallelized],
            };
            commands::cost(&config.load()?, &modes, strict_double_column)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
