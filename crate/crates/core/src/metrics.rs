//! Classification error, calibration, adaptation curves and per-sample
//! distance reports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{AdaptError, FeatureExtractor, RunTrace};
use crate::augment::AugmentationFamily;
use crate::geometry::{
    argmax, argmin, civd_influence_views, ClusterSiteSet, GeometryError, InfluenceConfig,
};
use crate::stream_sim::Batch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples to score")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("trace has {trace} batches but the stream has {stream}")]
    BatchCount { trace: usize, stream: usize },
    #[error("need at least one calibration bin")]
    NoBins,
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Labels of a batch, for scoring only.
pub fn hidden_labels(batch: &Batch) -> &[usize] {
    batch.labels()
}

/// Fraction of mismatches.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::Length(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_bins: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { n_bins: 10 }
    }
}

/// Bin of a confidence: `(i/n, (i+1)/n]`, with 0 in the first bin.
fn bin_of(c: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut b = ((c * n).ceil() as usize).clamp(1, n_bins) - 1;
    // the product can round across an edge; compare with the edges directly
    if b > 0 && c <= b as f64 / n {
        b -= 1;
    } else if b + 1 < n_bins && c > (b + 1) as f64 / n {
        b += 1;
    }
    b
}

/// Expected calibration error with equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], cfg: CalibrationConfig) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(MetricsError::Length(confidences.len(), correct.len()));
    }
    if confidences.is_empty() {
        return Err(MetricsError::Empty);
    }
    if cfg.n_bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let mut count = vec![0usize; cfg.n_bins];
    let mut conf = vec![0.0; cfg.n_bins];
    let mut hits = vec![0usize; cfg.n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(MetricsError::Confidence(c));
        }
        let b = bin_of(c, cfg.n_bins);
        count[b] += 1;
        conf[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..cfg.n_bins)
        .filter(|b| count[*b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf[b] / m).abs()
        })
        .sum())
}

/// One row of a scored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub batch_index: usize,
    pub mode: String,
    pub batch_error: f64,
    pub cum_error: f64,
    pub mean_loss: f64,
    pub kept_fraction: f64,
}

/// A trace joined with the stream's hidden labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrace {
    pub rows: Vec<TraceRow>,
    /// Error over the whole stream; `None` when there were no samples.
    pub error: Option<f64>,
    pub ece: Option<f64>,
    pub mean_kept_fraction: Option<f64>,
    pub n_samples: usize,
}

pub fn score_trace(trace: &RunTrace, batches: &[Batch]) -> Result<ScoredTrace> {
    if trace.records.len() != batches.len() {
        return Err(MetricsError::BatchCount {
            trace: trace.records.len(),
            stream: batches.len(),
        });
    }
    let mut rows = Vec::with_capacity(batches.len());
    let (mut wrong, mut seen) = (0usize, 0usize);
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for (rec, b) in trace.records.iter().zip(batches) {
        let labels = hidden_labels(b);
        if rec.predictions.len() != labels.len() {
            return Err(MetricsError::Length(rec.predictions.len(), labels.len()));
        }
        let w = rec.predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
        wrong += w;
        seen += labels.len();
        conf.extend_from_slice(&rec.confidences);
        correct.extend(rec.predictions.iter().zip(labels).map(|(p, y)| p == y));
        rows.push(TraceRow {
            batch_index: rec.batch_index,
            mode: trace.mode.name().to_string(),
            batch_error: if labels.is_empty() {
                0.0
            } else {
                w as f64 / labels.len() as f64
            },
            cum_error: if seen == 0 {
                0.0
            } else {
                wrong as f64 / seen as f64
            },
            mean_loss: rec.mean_loss,
            kept_fraction: rec.kept_fraction,
        });
    }
    let error = (seen > 0).then(|| wrong as f64 / seen as f64);
    let ece = if seen > 0 {
        Some(ece(&conf, &correct, CalibrationConfig::default())?)
    } else {
        None
    };
    let mean_kept_fraction = (!rows.is_empty())
        .then(|| rows.iter().map(|r| r.kept_fraction).sum::<f64>() / rows.len() as f64);
    Ok(ScoredTrace {
        rows,
        error,
        ece,
        mean_kept_fraction,
        n_samples: seen,
    })
}

/// `(batch_index, error over batches 0..=t)` for every batch.
pub fn adaptation_curve(trace: &RunTrace, batches: &[Batch]) -> Result<Vec<(usize, f64)>> {
    if trace.records.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(score_trace(trace, batches)?
        .rows
        .iter()
        .map(|r| (r.batch_index, r.cum_error))
        .collect())
}

const TRACE_HEADER: &str = "batch_index,mode,batch_error,cum_error,mean_loss,kept_fraction";

/// Trace rows as CSV. With `seed`, a leading seed column is added.
pub fn trace_csv<'a, I>(runs: I, with_seed: bool) -> String
where
    I: IntoIterator<Item = (u64, &'a [TraceRow])>,
{
    let mut out = String::new();
    if with_seed {
        out.push_str("seed,");
    }
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (seed, rows) in runs {
        for r in rows {
            if with_seed {
                let _ = write!(out, "{seed},");
            }
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.batch_index, r.mode, r.batch_error, r.cum_error, r.mean_loss, r.kept_fraction
            );
        }
    }
    out
}

/// Summary of one (mode, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub filtering: bool,
    pub n_batches: usize,
    pub n_samples: usize,
    pub error: Option<f64>,
    pub ece: Option<f64>,
    pub mean_kept_fraction: Option<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Distances of every rotated view of one input to the matching sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// `distances[a][k]` = distance of view `a` to site `a` of class `k`.
    pub distances: Vec<Vec<f64>>,
    /// Aggregated cluster influence of every class.
    pub influences: Vec<f64>,
    /// Nearest class of each view on its own.
    pub view_predictions: Vec<usize>,
    pub civd_prediction: usize,
}

impl DistanceReport {
    /// The aggregate is right while the unrotated view alone is wrong.
    pub fn aggregation_rescue(&self, label: usize) -> bool {
        self.civd_prediction == label && self.view_predictions[0] != label
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,class,distance,influence\n");
        for (a, row) in self.distances.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                let _ = writeln!(out, "{a},{k},{d:.9},{:.9}", self.influences[k]);
            }
        }
        out
    }
}

pub fn sample_distance_report(
    x: &[f64],
    fe: &FeatureExtractor,
    c: &ClusterSiteSet,
    fam: &AugmentationFamily,
    cfg: &InfluenceConfig,
) -> Result<DistanceReport> {
    let zs = fam
        .views(x)
        .map_err(AdaptError::from)?
        .iter()
        .map(|v| fe.forward(v).map(|p| p.into_inner()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let views: Vec<&[f64]> = zs.iter().map(Vec::as_slice).collect();
    let influences = c
        .clusters()
        .iter()
        .map(|cl| civd_influence_views(&views, cl, cfg))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let distances: Vec<Vec<f64>> = (0..fam.len())
        .map(|a| {
            c.clusters()
                .iter()
                .map(|cl| {
                    cl.site(a)
                        .iter()
                        .zip(&zs[a])
                        .map(|(s, z)| (s - z) * (s - z))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    Ok(DistanceReport {
        view_predictions: distances.iter().map(|d| argmin(d)).collect(),
        civd_prediction: argmax(&influences),
        distances,
        influences,
    })
}
