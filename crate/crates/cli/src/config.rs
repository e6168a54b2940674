//! Run configuration: command-line flags layered over an optional TOML
//! file of the same keys, then per-experiment defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dirbit_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Transmit,
    Angle,
    Majorize,
    FramebitVerify,
    CompositeCheck,
    InteractionScan,
    Capacity,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Transmit => "transmit",
            Experiment::Angle => "angle",
            Experiment::Majorize => "majorize",
            Experiment::FramebitVerify => "framebit-verify",
            Experiment::CompositeCheck => "composite-check",
            Experiment::InteractionScan => "interaction-scan",
            Experiment::Capacity => "capacity",
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Local dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Visibility a of the spin effects.
    #[arg(long)]
    pub visibility: Option<f64>,
    /// Noise offset c of the spin effects.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Shots per measured probability.
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid resolution (directions, pool size or search limit, by experiment).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Sample count (trials, pairs or constraint samples, by experiment).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// TOML file with any of the flag names as keys; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input vector for composite-check (CSV `i,j,value` or JSON).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Composite regime for composite-check: min, max or quantum-d3.
    #[arg(long)]
    pub regime: Option<String>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dim: Option<usize>,
    pub visibility: Option<f64>,
    pub noise: Option<f64>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub input: Option<PathBuf>,
    pub regime: Option<String>,
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            line,
            msg: e.message().to_string(),
        }
    })
}

/// Fully resolved settings, embedded in every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub dim: usize,
    pub visibility: f64,
    pub noise: f64,
    pub shots: u64,
    pub seed: u64,
    pub grid: usize,
    pub samples: usize,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub regime: Option<String>,
}

struct Defaults {
    dim: usize,
    shots: u64,
    grid: usize,
    samples: usize,
    format: Format,
}

fn defaults(e: Experiment) -> Defaults {
    let (dim, shots, grid, samples, format) = match e {
        Experiment::Transmit => (3, 100_000, 20, 100, Format::Csv),
        Experiment::Angle => (3, 1_000_000, 400, 1, Format::Json),
        Experiment::Majorize => (3, 0, 200, 1000, Format::Json),
        Experiment::FramebitVerify => (3, 0, 0, 0, Format::Json),
        Experiment::CompositeCheck => (3, 0, 200, 0, Format::Json),
        Experiment::InteractionScan => (2, 0, 0, 5000, Format::Json),
        Experiment::Capacity => (3, 0, 6, 0, Format::Json),
    };
    Defaults {
        dim,
        shots,
        grid,
        samples,
        format,
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

pub fn resolve(experiment: Experiment, flags: &Flags) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(p) => parse_config(&read_file(p)?)?,
        None => FileConfig::default(),
    };
    let d = defaults(experiment);
    let cfg = RunConfig {
        experiment,
        dim: flags.dim.or(file.dim).unwrap_or(d.dim),
        visibility: flags.visibility.or(file.visibility).unwrap_or(1.0),
        noise: flags.noise.or(file.noise).unwrap_or(0.5),
        shots: flags.shots.or(file.shots).unwrap_or(d.shots),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        grid: flags.grid.or(file.grid).unwrap_or(d.grid),
        samples: flags.samples.or(file.samples).unwrap_or(d.samples),
        format: flags.format.or(file.format).unwrap_or(d.format),
        out: flags.out.clone().or(file.out),
        input: flags.input.clone().or(file.input),
        regime: flags.regime.clone().or(file.regime),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidInput(msg));
    let max_dim = match cfg.experiment {
        Experiment::InteractionScan => 5,
        Experiment::FramebitVerify => 3,
        _ => 16,
    };
    if cfg.dim == 0 || cfg.dim > max_dim {
        return bad(format!("{} needs 1 <= dim <= {max_dim}", cfg.experiment.name()));
    }
    if cfg.experiment == Experiment::FramebitVerify && cfg.dim != 3 {
        return bad("framebit-verify is defined for d = 3 only".into());
    }
    dirbit_core::gpt::BallSpace::new(cfg.dim, cfg.visibility, cfg.noise)?;
    let uses = |field: &str| -> bool {
        use Experiment::*;
        match field {
            "shots" => matches!(cfg.experiment, Transmit | Angle),
            "grid" => matches!(cfg.experiment, Transmit | Angle | Majorize | CompositeCheck | Capacity),
            "samples" => matches!(cfg.experiment, Transmit | Angle | Majorize | InteractionScan),
            _ => false,
        }
    };
    if uses("shots") && cfg.shots == 0 {
        return bad("shots must be positive".into());
    }
    if uses("grid") && cfg.grid == 0 {
        return bad("grid must be positive".into());
    }
    if uses("samples") && cfg.samples == 0 {
        return bad("samples must be positive".into());
    }
    if cfg.experiment == Experiment::Capacity && !(5..=8).contains(&cfg.grid) {
        return bad("capacity search limit (grid) must lie in 5..=8".into());
    }
    if cfg.experiment != Experiment::CompositeCheck && (cfg.input.is_some() || cfg.regime.is_some()) {
        return bad("input and regime apply to composite-check only".into());
    }
    if let Some(r) = &cfg.regime {
        r.parse::<dirbit_core::composite::Regime>()?;
    }
    Ok(())
}
