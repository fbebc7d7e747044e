//! `vapormem`: config-driven runs of the pumping, memory, spectroscopy and
//! diffusion pipelines, each leaving a manifest that reproduces it exactly.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numeric failure.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Command;
use config::{FitKind, RunConfig, Trapping};

/// Caller error: bad config, missing input, unusable file. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Numeric or reproducibility failure. Exit code 3.
#[derive(Debug)]
pub struct NumericError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for NumericError {}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vapormem",
    version,
    about = "Caesium vapour memory simulations and fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Polarisation against temperature for each configured (buffer, line) run.
    PumpingCurve {
        #[command(flatten)]
        common: Common,
        /// Overrides `pumping.method`.
        #[arg(long, value_enum)]
        method: Option<Trapping>,
        /// Overrides `pumping.n_photons`.
        #[arg(long)]
        photons: Option<u64>,
    },
    /// Memory efficiency against control Rabi frequency.
    MemorySweep {
        #[command(flatten)]
        common: Common,
        /// Sets `memory.fwm_on = false`.
        #[arg(long)]
        no_fwm: bool,
        /// Sets `memory.no_fwm_companion = true`.
        #[arg(long)]
        companion: bool,
    },
    /// Synthetic inputs with known truth.
    #[command(subcommand)]
    Synthesize(SynthCmd),
    /// Fit a trace file or an image-series directory.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Overrides `fit.input`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Overrides `fit.kind`.
        #[arg(long, value_enum)]
        kind: Option<FitKind>,
        /// Overrides `fit.pressure_torr`.
        #[arg(long)]
        pressure_torr: Option<f64>,
        /// Sets `fit.quadrants = false`.
        #[arg(long)]
        no_quadrants: bool,
    },
    /// Rerun a manifest and verify its outputs are byte-identical.
    Replay {
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Probe transmission scan from the `[spectrum]` table.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Diffusing-hole image series from the `[image_series]` table.
    ImageSeries {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<commands::Manifest> {
    match cli.command {
        Cmd::PumpingCurve {
            common,
            method,
            photons,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.pumping.method = m;
            }
            if let Some(n) = photons {
                cfg.pumping.n_photons = n;
            }
            commands::execute(Command::PumpingCurve, &cfg)
        }
        Cmd::MemorySweep {
            common,
            no_fwm,
            companion,
        } => {
            let mut cfg = load(&common)?;
            if no_fwm {
                cfg.memory.fwm_on = false;
            }
            if companion {
                cfg.memory.no_fwm_companion = true;
            }
            commands::execute(Command::MemorySweep, &cfg)
        }
        Cmd::Synthesize(SynthCmd::Spectrum { common }) => {
            commands::execute(Command::SynthesizeSpectrum, &load(&common)?)
        }
        Cmd::Synthesize(SynthCmd::ImageSeries { common }) => {
            commands::execute(Command::SynthesizeImageSeries, &load(&common)?)
        }
        Cmd::Fit {
            common,
            input,
            kind,
            pressure_torr,
            no_quadrants,
        } => {
            let mut cfg = load(&common)?;
            if input.is_some() {
                cfg.fit.input = input;
            }
            if kind.is_some() {
                cfg.fit.kind = kind;
            }
            if pressure_torr.is_some() {
                cfg.fit.pressure_torr = pressure_torr;
            }
            if no_quadrants {
                cfg.fit.quadrants = false;
            }
            commands::execute(Command::Fit, &cfg)
        }
        Cmd::Replay {
            manifest,
            output_dir,
        } => commands::replay(&manifest, output_dir),
    }
}

/// Library numeric errors and explicit numeric failures map to 3; everything else to 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vapormem::Error>() {
            return if e.is_input_error() {
                EXIT_USAGE
            } else {
                EXIT_NUMERIC
            };
        }
        if cause.is::<NumericError>() {
            return EXIT_NUMERIC;
        }
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            for f in &manifest.outputs {
                println!("{}", f.path);
            }
            println!("{}", commands::MANIFEST_FILE);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
