//! Run configuration: command-line flags layered over an optional JSON
//! config file layered over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, LayerMode, QpTriple, Strategy};
use crate::mode_classifier::Thresholds;
use crate::synth::{generate, parse_size, Pattern};
use crate::video_io::{read_y4m, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Proposed,
    Baseline,
    Both,
}

impl StrategyChoice {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::Proposed => vec![Strategy::Proposed],
            StrategyChoice::Baseline => vec![Strategy::Baseline],
            StrategyChoice::Both => vec![Strategy::Proposed, Strategy::Baseline],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LayersChoice {
    Single,
    Scalable,
}

impl From<LayersChoice> for LayerMode {
    fn from(c: LayersChoice) -> Self {
        match c {
            LayersChoice::Single => LayerMode::Single,
            LayersChoice::Scalable => LayerMode::Scalable,
        }
    }
}

/// Every option shared by the encoding commands. All fields are optional
/// so that a config file can fill whatever the command line leaves out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Y4M input file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic pattern used when no input is given.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Synthetic frame size: cif, qcif or WxH.
    #[arg(long)]
    pub size: Option<String>,
    /// Synthetic frame count.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GOP size, a power of two up to 32.
    #[arg(long)]
    pub gop: Option<usize>,
    /// QP as `q` or `base/el1/el2`. Repeat for several operating points.
    #[arg(long)]
    pub qp: Vec<String>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long)]
    pub k3: Option<f64>,
    #[arg(long)]
    pub d1: Option<f64>,
    #[arg(long)]
    pub d2: Option<f64>,
    #[arg(long)]
    pub d3: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyChoice>,
    #[arg(long, value_enum)]
    pub layers: Option<LayersChoice>,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// RD-point CSV path.
    #[arg(long)]
    pub rd_csv: Option<PathBuf>,
    /// Class-map CSV path.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Class-map PGM path.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Include wall-clock times in reports (makes them non-reproducible).
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub timing: bool,
}

impl RunOptions {
    /// `self` wins wherever it has a value.
    pub fn over(self, lower: RunOptions) -> RunOptions {
        RunOptions {
            input: self.input.or(lower.input),
            pattern: self.pattern.or(lower.pattern),
            size: self.size.or(lower.size),
            frames: self.frames.or(lower.frames),
            seed: self.seed.or(lower.seed),
            gop: self.gop.or(lower.gop),
            qp: if self.qp.is_empty() { lower.qp } else { self.qp },
            k1: self.k1.or(lower.k1),
            k2: self.k2.or(lower.k2),
            k3: self.k3.or(lower.k3),
            d1: self.d1.or(lower.d1),
            d2: self.d2.or(lower.d2),
            d3: self.d3.or(lower.d3),
            strategy: self.strategy.or(lower.strategy),
            layers: self.layers.or(lower.layers),
            report: self.report.or(lower.report),
            rd_csv: self.rd_csv.or(lower.rd_csv),
            map: self.map.or(lower.map),
            pgm: self.pgm.or(lower.pgm),
            jobs: self.jobs.or(lower.jobs),
            timing: self.timing || lower.timing,
        }
    }

    pub fn from_file(path: &Path) -> Result<RunOptions> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub const DEFAULT_GOP: usize = 16;
pub const DEFAULT_FRAMES: usize = 33;
pub const DEFAULT_SEED: u64 = 1;

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: SourceSpec,
    pub qps: Vec<QpTriple>,
    pub strategy: StrategyChoice,
    pub encoder: EncoderConfig,
    pub report: Option<PathBuf>,
    pub rd_csv: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub pgm: Option<PathBuf>,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    Y4m(PathBuf),
    Synthetic {
        pattern: Pattern,
        width: usize,
        height: usize,
        frames: usize,
        seed: u64,
    },
}

impl SourceSpec {
    pub fn load(&self) -> Result<Sequence> {
        match self {
            SourceSpec::Y4m(path) => read_y4m(path).with_context(|| format!("reading {}", path.display())),
            SourceSpec::Synthetic {
                pattern,
                width,
                height,
                frames,
                seed,
            } => Ok(generate(*pattern, *width, *height, *frames, *seed)?),
        }
    }
}

impl RunConfig {
    /// Resolves options, falling back to `default_qps` when no QP is given.
    pub fn resolve(opts: RunOptions, default_qps: &[QpTriple]) -> Result<RunConfig> {
        let source = match (&opts.input, &opts.pattern) {
            (Some(_), Some(_)) => bail!("give either --input or --pattern, not both"),
            (Some(path), None) => SourceSpec::Y4m(path.clone()),
            (None, pattern) => {
                let (width, height) = parse_size(opts.size.as_deref().unwrap_or("cif"))?;
                SourceSpec::Synthetic {
                    pattern: pattern.as_deref().unwrap_or("mixed").parse()?,
                    width,
                    height,
                    frames: opts.frames.unwrap_or(DEFAULT_FRAMES),
                    seed: opts.seed.unwrap_or(DEFAULT_SEED),
                }
            }
        };
        let qps = if opts.qp.is_empty() {
            default_qps.to_vec()
        } else {
            opts.qp
                .iter()
                .map(|q| q.parse::<QpTriple>().map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?
        };
        let d = Thresholds::default();
        let thresholds = Thresholds {
            k1: opts.k1.unwrap_or(d.k1),
            k2: opts.k2.unwrap_or(d.k2),
            k3: opts.k3.unwrap_or(d.k3),
            d1: opts.d1.unwrap_or(d.d1),
            d2: opts.d2.unwrap_or(d.d2),
            d3: opts.d3.unwrap_or(d.d3),
        };
        thresholds.validate()?;
        let jobs = opts.jobs.unwrap_or(1);
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(RunConfig {
            source,
            qps,
            strategy: opts.strategy.unwrap_or(StrategyChoice::Proposed),
            encoder: EncoderConfig {
                gop_size: opts.gop.unwrap_or(DEFAULT_GOP),
                qp: QpTriple::DEFAULTS[0],
                thresholds,
                layer_mode: opts.layers.unwrap_or(LayersChoice::Scalable).into(),
                jobs,
                record_mbs: false,
            },
            report: opts.report,
            rd_csv: opts.rd_csv,
            map: opts.map,
            pgm: opts.pgm,
            timing: opts.timing,
        })
    }

    pub fn encoder_for(&self, qp: QpTriple) -> EncoderConfig {
        EncoderConfig { qp, ..self.encoder.clone() }
    }
}
