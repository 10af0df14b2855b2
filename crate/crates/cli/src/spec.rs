//! Experiment settings: a flat TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::de::value::StrDeserializer;
use serde::de::IntoDeserializer;
use serde::{Deserialize, Serialize};
use ttvd_core::experiment::adapt_config_for;
use ttvd_core::stream_sim::{Corruption, CorruptionKind};
use ttvd_core::{AdaptConfig, Exec, InfluenceConfig, Mode, StreamConfig};

use crate::error::{CliError, Result};

/// The sweep dimension of `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    Alpha,
    SiteFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Alpha => "alpha",
            SweepAxis::SiteFraction => "site_fraction",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::BatchSize => vec![64.0, 32.0, 16.0, 8.0],
            SweepAxis::Alpha => vec![1.0, 0.1, 0.01],
            SweepAxis::SiteFraction => vec![1.0, 0.1, 0.01],
        }
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "batch_size" | "batch-size" => Ok(SweepAxis::BatchSize),
            "alpha" => Ok(SweepAxis::Alpha),
            "site_fraction" | "site-fraction" => Ok(SweepAxis::SiteFraction),
            other => Err(CliError::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// A rendered planar diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagram {
    Vd,
    Pd,
    Civd,
    Cipd,
    Subtraction,
}

impl Diagram {
    pub const ALL: [Diagram; 5] = [
        Diagram::Vd,
        Diagram::Pd,
        Diagram::Civd,
        Diagram::Cipd,
        Diagram::Subtraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagram::Vd => "vd",
            Diagram::Pd => "pd",
            Diagram::Civd => "civd",
            Diagram::Cipd => "cipd",
            Diagram::Subtraction => "subtraction",
        }
    }
}

impl fmt::Display for Diagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Diagram {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Diagram::ALL
            .into_iter()
            .find(|d| d.name() == s.trim())
            .ok_or_else(|| CliError::Config(format!("unknown diagram `{}`", s.trim())))
    }
}

/// Everything one invocation needs. Keys match the long flag names, with
/// `_` in place of `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seeds: Vec<u64>,
    pub mode: Vec<Mode>,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub steps_per_batch: usize,
    /// Unset means: filter in CIPD mode only.
    pub filter: Option<bool>,
    pub batch_size: usize,
    pub n_batches: usize,
    /// Dirichlet concentration of per-batch label proportions; unset is i.i.d.
    pub alpha: Option<f64>,
    pub corruption: CorruptionKind,
    pub severity: u8,
    pub n_classes: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub n_train_per_class: usize,
    pub site_fraction: f64,
    /// Replace the fitted power weights by zeros.
    pub zero_weights: bool,
    pub axis: SweepAxis,
    /// Sweep values; empty picks the axis defaults.
    pub values: Vec<f64>,
    pub which: Vec<Diagram>,
    pub raster_size: usize,
    pub parallel: bool,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let stream = StreamConfig::default();
        let adapt = AdaptConfig::default();
        Self {
            seeds: (0..10).collect(),
            mode: vec![Mode::Vd, Mode::Civd, Mode::Cipd],
            lr: adapt.learning_rate,
            gamma: adapt.influence.gamma,
            tau: adapt.tau,
            steps_per_batch: adapt.steps_per_batch,
            filter: None,
            batch_size: stream.batch_size,
            n_batches: stream.n_batches,
            alpha: stream.label_shift_alpha,
            corruption: stream.corruption.kind,
            severity: stream.corruption.severity,
            n_classes: stream.n_classes,
            input_dim: stream.input_dim,
            feature_dim: stream.feature_dim,
            n_train_per_class: stream.n_train_per_class,
            site_fraction: 1.0,
            zero_weights: false,
            axis: SweepAxis::BatchSize,
            values: Vec::new(),
            which: Diagram::ALL.to_vec(),
            raster_size: 200,
            parallel: true,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Optional config file, then flag overrides, then validation.
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let mut spec = match &overrides.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        overrides.apply(&mut spec)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn stream_config(&self, seed: u64) -> StreamConfig {
        StreamConfig {
            n_classes: self.n_classes,
            input_dim: self.input_dim,
            feature_dim: self.feature_dim,
            n_train_per_class: self.n_train_per_class,
            corruption: Corruption {
                kind: self.corruption,
                severity: self.severity,
            },
            batch_size: self.batch_size,
            n_batches: self.n_batches,
            label_shift_alpha: self.alpha,
            seed,
            ..StreamConfig::default()
        }
    }

    pub fn influence(&self) -> InfluenceConfig {
        InfluenceConfig {
            gamma: self.gamma,
            ..InfluenceConfig::default()
        }
    }

    pub fn adapt_config(&self, mode: Mode) -> AdaptConfig {
        let base = AdaptConfig {
            tau: self.tau,
            learning_rate: self.lr,
            influence: self.influence(),
            steps_per_batch: self.steps_per_batch,
            exec: self.exec(),
            ..AdaptConfig::default()
        };
        adapt_config_for(&base, mode, self.filter)
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.axis.default_values()
        } else {
            self.values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.mode.is_empty() {
            return bad("mode list is empty".into());
        }
        for (i, m) in self.mode.iter().enumerate() {
            if *m == Mode::CivdSquared {
                return bad("modes are vd, civd and cipd".into());
            }
            if self.mode[..i].contains(m) {
                return bad(format!("mode {m} listed twice"));
            }
        }
        if !(self.site_fraction > 0.0 && self.site_fraction <= 1.0) {
            return bad(format!("site_fraction must be in (0, 1], got {}", self.site_fraction));
        }
        if self.raster_size < 2 {
            return bad("raster_size must be at least 2".into());
        }
        for v in self.sweep_values() {
            let ok = match self.axis {
                SweepAxis::BatchSize => v >= 1.0 && v.fract() == 0.0,
                SweepAxis::Alpha => v.is_finite() && v > 0.0,
                SweepAxis::SiteFraction => v > 0.0 && v <= 1.0,
            };
            if !ok {
                return bad(format!("invalid {} value {v}", self.axis.name()));
            }
        }
        self.stream_config(self.seeds[0])
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for m in &self.mode {
            self.adapt_config(*m)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// `0,1,2`, `0..10` or a mix such as `0..3,7`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Config(format!("bad seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                out.extend(a..b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

pub fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| Mode::parse(p).ok_or_else(|| CliError::Config(format!("unknown mode `{p}`"))))
        .collect()
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| CliError::Config(format!("bad {what} `{p}`")))
        })
        .collect()
}

/// Flags shared by every command; each one overrides the config key of the
/// same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat TOML file with any of the keys below.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seeds, e.g. `0,1,2` or `0..10`.
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,
    /// Modes among vd, civd, cipd.
    #[arg(long, value_name = "LIST")]
    pub mode: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub steps_per_batch: Option<usize>,
    #[arg(long, value_name = "BOOL")]
    pub filter: Option<bool>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_batches: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// none, gaussian_noise, scale_drift, rotation_drift or shift_drift.
    #[arg(long)]
    pub corruption: Option<String>,
    #[arg(long)]
    pub severity: Option<u8>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub n_train_per_class: Option<usize>,
    #[arg(long)]
    pub site_fraction: Option<f64>,
    #[arg(long, value_name = "BOOL")]
    pub zero_weights: Option<bool>,
    /// Sweep axis: batch_size, alpha or site_fraction.
    #[arg(long)]
    pub axis: Option<String>,
    /// Sweep values.
    #[arg(long, value_name = "LIST")]
    pub values: Option<String>,
    /// Diagrams among vd, pd, civd, cipd, subtraction.
    #[arg(long, value_name = "LIST")]
    pub which: Option<String>,
    #[arg(long)]
    pub raster_size: Option<usize>,
    #[arg(long, value_name = "BOOL")]
    pub parallel: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    spec.$f = v.clone();
                }
            )*};
        }
        set!(
            out,
            lr,
            gamma,
            tau,
            steps_per_batch,
            batch_size,
            n_batches,
            severity,
            n_classes,
            input_dim,
            feature_dim,
            n_train_per_class,
            site_fraction,
            zero_weights,
            raster_size,
            parallel
        );
        if self.filter.is_some() {
            spec.filter = self.filter;
        }
        if self.alpha.is_some() {
            spec.alpha = self.alpha;
        }
        if let Some(s) = &self.seeds {
            spec.seeds = parse_seeds(s)?;
        }
        if let Some(s) = &self.mode {
            spec.mode = parse_modes(s)?;
        }
        if let Some(s) = &self.corruption {
            let de: StrDeserializer<'_, serde::de::value::Error> = s.trim().into_deserializer();
            spec.corruption = CorruptionKind::deserialize(de)
                .map_err(|_| CliError::Config(format!("unknown corruption `{s}`")))?;
        }
        if let Some(s) = &self.axis {
            spec.axis = s.parse()?;
        }
        if let Some(s) = &self.values {
            spec.values = parse_list(s, "sweep value")?;
        }
        if let Some(s) = &self.which {
            spec.which = parse_list(s, "diagram")?;
        }
        Ok(())
    }
}
