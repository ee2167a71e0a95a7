//! Command-line front end: one JSON configuration, one subcommand per
//! workflow, reproducible CSV and JSON outputs.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use subharmonic::benchmarking::Generator;

pub use config::RunConfig;
pub use output::{Meta, Sink};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] subharmonic::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "subharmonic", version, about = "Sub-harmonic driving of fluxonium qubits")]
pub struct Cli {
    /// JSON run configuration; missing sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override a config value, e.g. `--set rb.t1=31`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Eigenenergies at the configured flux.
    Spectrum,
    /// Lowest transitions over a flux grid.
    FluxSweep,
    /// Excited population against drive frequency.
    Spectroscopy,
    /// Population against detuning and pulse length around a resonance.
    Chevron {
        #[arg(long, default_value_t = 3)]
        n: u32,
        /// Drive amplitude, Φ/Φ₀; overrides `drive.amplitude`.
        #[arg(long)]
        amp: Option<f64>,
    },
    /// Resonance shift from propagation and from the effective model.
    Stark {
        #[arg(long, default_value_t = 3)]
        n: u32,
        /// Comma-separated amplitudes; overrides `stark.amplitudes`.
        #[arg(long, value_delimiter = ',')]
        amps: Vec<f64>,
    },
    /// Rabi rate against amplitude with power-law fits.
    RabiScaling {
        #[arg(long, value_delimiter = ',', default_values_t = [3u32])]
        n: Vec<u32>,
    },
    /// Fit the line attenuation coefficient.
    TransferFit,
    /// Rough and fine calibration of an n-photon gate.
    Calibrate {
        #[arg(long, default_value_t = 3)]
        n: u32,
    },
    /// Randomized benchmarking.
    Rb {
        /// Gate to interleave, one of I, X, -X, Y, -Y, X/2, -X/2, Y/2, -Y/2.
        #[arg(long, value_parser = parse_gate, allow_hyphen_values = true)]
        interleaved: Option<Generator>,
    },
    /// Coherence and noise-budget report.
    NoiseBudget,
}

fn parse_gate(s: &str) -> Result<Generator, String> {
    s.parse().map_err(|e: subharmonic::Error| e.to_string())
}

impl Command {
    fn label(&self) -> String {
        match self {
            Command::Spectrum => "spectrum".into(),
            Command::FluxSweep => "flux-sweep".into(),
            Command::Spectroscopy => "spectroscopy".into(),
            Command::Chevron { n, .. } => format!("chevron --n {n}"),
            Command::Stark { n, .. } => format!("stark --n {n}"),
            Command::RabiScaling { n } => {
                let list: Vec<String> = n.iter().map(|x| x.to_string()).collect();
                format!("rabi-scaling --n {}", list.join(","))
            }
            Command::TransferFit => "transfer-fit".into(),
            Command::Calibrate { n } => format!("calibrate --n {n}"),
            Command::Rb { .. } => "rb".into(),
            Command::NoiseBudget => "noise-budget".into(),
        }
    }

    /// Subcommand flags that stand for config values.
    fn overrides(&self) -> Vec<String> {
        match self {
            Command::Chevron { amp: Some(a), .. } => vec![format!("drive.amplitude={a}")],
            Command::Stark { amps, .. } if !amps.is_empty() => {
                vec![format!("stark.amplitudes={}", serde_json::to_string(amps).expect("floats serialize"))]
            }
            Command::Rb { interleaved: Some(g) } => {
                vec![format!("rb.interleaved={}", serde_json::to_string(g).expect("gate serializes"))]
            }
            _ => Vec::new(),
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub meta: Meta,
}

/// Effective configuration: file, then `--set`, then subcommand flags,
/// then `--seed` and `--out`.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut overrides = cli.set.clone();
    overrides.extend(cli.command.overrides());
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &cli.out {
        let path = o.to_str().ok_or_else(|| CliError::Config("--out is not valid UTF-8".into()))?;
        overrides.push(format!("output.directory={}", serde_json::to_string(path)?));
    }
    let config = RunConfig::from_json(text.as_deref(), &overrides)?;
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let config = load_config(cli)?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut sink = Sink::new(&config, &cli.command.label())?;
    sink.config_echo(&config)?;
    let lines = match &cli.command {
        Command::Spectrum => commands::spectrum(&config, &mut sink)?,
        Command::FluxSweep => commands::flux(&config, &mut sink)?,
        Command::Spectroscopy => commands::spectroscopy(&config, &mut sink)?,
        Command::Chevron { n, .. } => commands::chevron_map(&config, &mut sink, *n)?,
        Command::Stark { n, .. } => commands::stark(&config, &mut sink, *n)?,
        Command::RabiScaling { n } => commands::rabi_scaling(&config, &mut sink, n)?,
        Command::TransferFit => commands::transfer_fit(&config, &mut sink)?,
        Command::Calibrate { n } => commands::calibrate(&config, &mut sink, *n)?,
        Command::Rb { .. } => commands::rb(&config, &mut sink)?,
        Command::NoiseBudget => commands::noise_budget(&config, &mut sink)?,
    };
    Ok(Outcome {
        lines,
        files: sink.written.clone(),
        meta: sink.meta.clone(),
    })
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
