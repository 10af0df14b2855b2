//! Synthetic source data, shifted test streams and source-time site fitting.
//!
//! Every run is generated from one seed. Independent ChaCha streams of that
//! seed drive the world (class means, spreads, frozen map), the labelled
//! source set and the test stream, so changing the stream settings never
//! perturbs the source data.
//!
//! Raw inputs have even length and are read as coordinate pairs, which lets
//! [`AugmentationFamily`] rotate them exactly.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{AdaptError, FeatureExtractor, NormStage};
use crate::augment::AugmentationFamily;
use crate::geometry::{sq_dist, ClusterSiteSet, GeometryError, LogisticHead, SiteSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("power weight fit diverged")]
    FitDiverged,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SimError>;

const WORLD_STREAM: u64 = 0;
const SOURCE_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    None,
    /// Adds `N(0, (0.5 s)^2)` to every coordinate.
    GaussianNoise,
    /// Multiplies inputs by `1 - 0.03 s`.
    ScaleDrift,
    /// Turns every coordinate pair by `2 s` degrees.
    RotationDrift,
    /// Adds `0.25 s` to every coordinate.
    ShiftDrift,
}

/// A corruption and its severity `s` in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            kind: CorruptionKind::ScaleDrift,
            severity: 3,
        }
    }
}

impl Corruption {
    pub fn none() -> Self {
        Self {
            kind: CorruptionKind::None,
            severity: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != CorruptionKind::None && !(1..=5).contains(&self.severity) {
            return Err(SimError::InvalidConfig(format!(
                "severity must be in 1..=5, got {}",
                self.severity
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &mut [f64], rng: &mut ChaCha8Rng) {
        let s = f64::from(self.severity);
        match self.kind {
            CorruptionKind::None => {}
            CorruptionKind::GaussianNoise => x.iter_mut().for_each(|v| *v += 0.5 * s * normal(rng)),
            CorruptionKind::ScaleDrift => x.iter_mut().for_each(|v| *v *= 1.0 - 0.03 * s),
            CorruptionKind::RotationDrift => {
                let (sin, cos) = (2.0 * s).to_radians().sin_cos();
                for p in x.chunks_exact_mut(2) {
                    let (u, v) = (p[0], p[1]);
                    p[0] = cos * u - sin * v;
                    p[1] = sin * u + cos * v;
                }
            }
            CorruptionKind::ShiftDrift => x.iter_mut().for_each(|v| *v += 0.25 * s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub n_classes: usize,
    /// Raw input length `m`; even.
    pub input_dim: usize,
    /// Feature length `l`.
    pub feature_dim: usize,
    pub n_train_per_class: usize,
    /// Standard deviation of class means around the common centre.
    pub class_mean_scale: f64,
    /// Per-coordinate standard deviation of a class.
    pub class_cov_scale: f64,
    /// Class standard deviations vary uniformly within `cov * (1 +- jitter)`.
    pub class_spread_jitter: f64,
    /// Standard deviation of the common centre shared by all classes.
    pub input_offset_scale: f64,
    /// Entries of the frozen map are `N(0, gain^2 / m)`.
    pub feature_gain: f64,
    /// Weight of test-batch statistics in the normalisation stage.
    pub norm_batch_weight: f64,
    pub corruption: Corruption,
    pub batch_size: usize,
    pub n_batches: usize,
    /// Dirichlet concentration of per-batch class proportions; `None` is uniform.
    pub label_shift_alpha: Option<f64>,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            input_dim: 64,
            feature_dim: 32,
            n_train_per_class: 20000,
            class_mean_scale: 1.0,
            class_cov_scale: 2.0,
            class_spread_jitter: 0.5,
            input_offset_scale: 20.0,
            feature_gain: 0.03,
            norm_batch_weight: 0.15,
            corruption: Corruption::default(),
            batch_size: 64,
            n_batches: 50,
            label_shift_alpha: None,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.input_dim == 0 || self.input_dim % 2 != 0 {
            return bad(format!("input_dim must be even and positive, got {}", self.input_dim));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.n_train_per_class == 0 {
            return bad("n_train_per_class must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let reals = [
            ("class_mean_scale", self.class_mean_scale),
            ("class_cov_scale", self.class_cov_scale),
            ("class_spread_jitter", self.class_spread_jitter),
            ("input_offset_scale", self.input_offset_scale),
            ("feature_gain", self.feature_gain),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.class_spread_jitter >= 1.0 {
            return bad("class_spread_jitter must be below 1".into());
        }
        if self.feature_gain == 0.0 {
            return bad("feature_gain must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.norm_batch_weight) {
            return bad("norm_batch_weight must be in [0, 1]".into());
        }
        if let Some(a) = self.label_shift_alpha {
            if !(a.is_finite() && a > 0.0) {
                return bad(format!("label_shift_alpha must be positive, got {a}"));
            }
        }
        self.corruption.validate()
    }
}

/// Labelled raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The first `max(1, round(fraction * n_k))` samples of every class.
    pub fn subsample_per_class(&self, fraction: f64) -> Self {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        let quota: Vec<usize> = counts
            .iter()
            .map(|&n| ((fraction * n as f64).round() as usize).clamp(1, n.max(1)))
            .collect();
        let mut taken = vec![0usize; self.n_classes];
        let mut out = Self {
            inputs: Vec::new(),
            labels: Vec::new(),
            n_classes: self.n_classes,
        };
        for (x, &y) in self.inputs.iter().zip(&self.labels) {
            if taken[y] < quota[y] {
                taken[y] += 1;
                out.inputs.push(x.clone());
                out.labels.push(y);
            }
        }
        out
    }

    fn check_classes(&self) -> Result<()> {
        let mut seen = vec![false; self.n_classes];
        for &y in &self.labels {
            seen[y] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(k) => Err(SimError::MissingClass(k)),
            None => Ok(()),
        }
    }
}

/// One online batch. Labels stay hidden from adaptation; read them through
/// [`crate::metrics::hidden_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Batch {
    pub(crate) fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        Self { inputs, labels }
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub(crate) fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl AsRef<[Vec<f64>]> for Batch {
    fn as_ref(&self) -> &[Vec<f64>] {
        &self.inputs
    }
}

/// Everything drawn once per seed: class means and spreads, frozen map.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: StreamConfig,
    pub means: Vec<Vec<f64>>,
    pub spreads: Vec<f64>,
    pub frozen_map: Vec<Vec<f64>>,
}

impl World {
    pub fn new(config: &StreamConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, WORLD_STREAM);
        let m = config.input_dim;
        let center: Vec<f64> = (0..m)
            .map(|_| config.input_offset_scale * normal(&mut rng))
            .collect();
        let means = (0..config.n_classes)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + config.class_mean_scale * normal(&mut rng))
                    .collect()
            })
            .collect();
        let unit = Uniform::new(-1.0, 1.0).expect("valid range");
        let spreads = (0..config.n_classes)
            .map(|_| config.class_cov_scale * (1.0 + config.class_spread_jitter * unit.sample(&mut rng)))
            .collect();
        let gain = config.feature_gain / (m as f64).sqrt();
        let frozen_map = (0..config.feature_dim)
            .map(|_| (0..m).map(|_| gain * normal(&mut rng)).collect())
            .collect();
        Ok(Self {
            config: config.clone(),
            means,
            spreads,
            frozen_map,
        })
    }

    fn draw(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.spreads[k];
        self.means[k].iter().map(|mu| mu + s * normal(rng)).collect()
    }

    /// Clean labelled source data, class by class.
    pub fn source(&self) -> LabeledSet {
        let mut rng = rng_for(self.config.seed, SOURCE_STREAM);
        let n = self.config.n_train_per_class;
        let mut inputs = Vec::with_capacity(n * self.config.n_classes);
        let mut labels = Vec::with_capacity(inputs.capacity());
        for k in 0..self.config.n_classes {
            for _ in 0..n {
                inputs.push(self.draw(k, &mut rng));
                labels.push(k);
            }
        }
        LabeledSet {
            inputs,
            labels,
            n_classes: self.config.n_classes,
        }
    }

    /// Corrupted online test batches.
    pub fn stream(&self) -> Vec<Batch> {
        let cfg = &self.config;
        let mut rng = rng_for(cfg.seed, TEST_STREAM);
        let k = cfg.n_classes;
        (0..cfg.n_batches)
            .map(|_| {
                let props = match cfg.label_shift_alpha {
                    Some(alpha) => dirichlet(alpha, k, &mut rng),
                    None => vec![1.0; k],
                };
                let pick = WeightedIndex::new(&props).expect("positive proportions");
                let labels: Vec<usize> = (0..cfg.batch_size).map(|_| pick.sample(&mut rng)).collect();
                let inputs = labels
                    .iter()
                    .map(|&y| {
                        let mut x = self.draw(y, &mut rng);
                        cfg.corruption.apply(&mut x, &mut rng);
                        x
                    })
                    .collect();
                Batch::new(inputs, labels)
            })
            .collect()
    }

    /// Frozen projection with the identity affine and no normalisation.
    pub fn extractor(&self) -> FeatureExtractor {
        FeatureExtractor::new(self.frozen_map.clone()).expect("world map is valid")
    }

    /// [`World::extractor`] plus the normalisation stage fitted on `source`.
    pub fn normalized_extractor(
        &self,
        source: &LabeledSet,
        fam: &AugmentationFamily,
    ) -> Result<FeatureExtractor> {
        let fe = self.extractor();
        let norm = NormStage::fit(&fe, &source.inputs, fam, self.config.norm_batch_weight)?;
        Ok(fe.with_normalization(norm))
    }
}

/// Symmetric Dirichlet draw. Gamma variates are formed in log space as
/// `ln G(1 + a) + ln(U) / a`, which stays accurate for tiny `a`.
pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0 + alpha, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn gen_source(cfg: &StreamConfig) -> Result<LabeledSet> {
    Ok(World::new(cfg)?.source())
}

pub fn gen_stream(cfg: &StreamConfig) -> Result<Vec<Batch>> {
    Ok(World::new(cfg)?.stream())
}

fn class_means(
    train: &LabeledSet,
    fe: &FeatureExtractor,
    fam: &AugmentationFamily,
    a: usize,
) -> Result<Vec<Vec<f64>>> {
    train.check_classes()?;
    let mut sums = vec![vec![0.0; fe.out_dim()]; train.n_classes];
    let mut counts = vec![0usize; train.n_classes];
    for (x, &y) in train.inputs.iter().zip(&train.labels) {
        let z = fe.forward(&fam.apply(a, x).map_err(AdaptError::from)?)?;
        for (s, v) in sums[y].iter_mut().zip(z.iter()) {
            *s += v;
        }
        counts[y] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

/// Class-mean features.
pub fn estimate_sites(train: &LabeledSet, fe: &FeatureExtractor) -> Result<SiteSet> {
    Ok(SiteSet::new(class_means(
        train,
        fe,
        &AugmentationFamily::identity(),
        0,
    )?)?)
}

/// Class-mean features of every augmentation; cluster `k` holds the sites
/// of class `k` in family order.
pub fn expand_cluster_sites(
    train: &LabeledSet,
    fe: &FeatureExtractor,
    fam: &AugmentationFamily,
) -> Result<ClusterSiteSet> {
    let per_view = (0..fam.len())
        .map(|a| class_means(train, fe, fam, a))
        .collect::<Result<Vec<_>>>()?;
    let clusters = (0..train.n_classes)
        .map(|k| per_view.iter().map(|v| v[k].clone()).collect())
        .collect();
    Ok(ClusterSiteSet::new(clusters)?)
}

/// A fitted power-weight head.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFit {
    /// Signed squared weights, shifted so the smallest is zero.
    pub weights_sq: Vec<f64>,
    /// Inverse temperature of the fitted head.
    pub beta: f64,
    /// Head with rows `2 mu_k`, argmax-equivalent to the fitted one.
    pub head: LogisticHead,
    pub final_loss: f64,
}

/// Fits `logits_k = -beta |z - mu_k|^2 + c_k` by Newton's method on the
/// source cross-entropy, then reads the power weights off the head.
///
/// The head has rows `W_k = 2 beta mu_k`, so its power sites are the given
/// class sites. Dividing by `beta` leaves the argmax unchanged and gives
/// `v_k^2 = c_k / beta`.
pub fn fit_power_weights(
    train: &LabeledSet,
    fe: &FeatureExtractor,
    sites: &SiteSet,
) -> Result<PowerFit> {
    let k = sites.len();
    if k < 2 {
        return Err(SimError::InvalidConfig("need at least 2 classes".into()));
    }
    train.check_classes()?;
    let d2: Vec<Vec<f64>> = train
        .inputs
        .iter()
        .map(|x| {
            let z = fe.forward(x)?;
            Ok(sites.iter().map(|s| sq_dist(&z, s)).collect())
        })
        .collect::<Result<_>>()?;
    let n = d2.len() as f64;
    // parameters: beta, then c_1..c_{K-1}; c_0 = 0 fixes the softmax gauge
    let loss_at = |theta: &[f64]| -> f64 {
        d2.iter()
            .zip(&train.labels)
            .map(|(row, &y)| {
                let l = logits(row, theta);
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - l[y]
            })
            .sum::<f64>()
            / n
    };
    let mean_d2 = d2.iter().flatten().sum::<f64>() / (n * k as f64);
    let mut theta = vec![0.0; k];
    theta[0] = 1.0 / mean_d2.max(f64::MIN_POSITIVE);
    let mut loss = loss_at(&theta);
    for _ in 0..100 {
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for (row, &y) in d2.iter().zip(&train.labels) {
            let l = logits(row, &theta);
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / total).collect();
            // d logit_j / d beta = -d2_j and d logit_j / d c_i = [i == j]
            let pd: f64 = (0..k).map(|j| p[j] * row[j]).sum();
            grad[0] += row[y] - pd;
            hess[(0, 0)] += (0..k).map(|j| p[j] * row[j] * row[j]).sum::<f64>() - pd * pd;
            for t in 1..k {
                grad[t] += p[t] - f64::from(u8::from(t == y));
                hess[(t, 0)] += -p[t] * row[t] + p[t] * pd;
                for u in 1..=t {
                    hess[(t, u)] += f64::from(u8::from(t == u)) * p[t] - p[t] * p[u];
                }
            }
        }
        for t in 0..k {
            for u in 0..t {
                hess[(u, t)] = hess[(t, u)];
            }
        }
        grad /= n;
        hess /= n;
        if grad.norm() < 1e-10 {
            break;
        }
        let ridge = 1e-10 * hess.diagonal().max().max(1.0);
        for t in 0..k {
            hess[(t, t)] += ridge;
        }
        let step = hess.lu().solve(&grad).ok_or(SimError::FitDiverged)?;
        let mut eta = 1.0;
        let improved = loop {
            let cand: Vec<f64> = (0..k).map(|t| theta[t] - eta * step[t]).collect();
            if cand[0] > 0.0 {
                let l = loss_at(&cand);
                if l.is_finite() && l <= loss - 1e-4 * eta * grad.dot(&step) {
                    break Some((cand, l));
                }
            }
            eta *= 0.5;
            if eta < 1e-12 {
                break None;
            }
        };
        match improved {
            Some((cand, l)) => {
                let done = loss - l < 1e-15;
                theta = cand;
                loss = l;
                if done {
                    break;
                }
            }
            None => break,
        }
    }
    if !loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
        return Err(SimError::FitDiverged);
    }
    let beta = theta[0];
    let mut weights_sq: Vec<f64> = (0..k)
        .map(|j| if j == 0 { 0.0 } else { theta[j] / beta })
        .collect();
    let min = weights_sq.iter().copied().fold(f64::INFINITY, f64::min);
    weights_sq.iter_mut().for_each(|w| *w -= min);
    let rows: Vec<Vec<f64>> = sites.iter().map(|s| s.iter().map(|v| 2.0 * v).collect()).collect();
    let bias: Vec<f64> = sites
        .iter()
        .zip(&weights_sq)
        .map(|(s, w)| w - s.iter().map(|v| v * v).sum::<f64>())
        .collect();
    Ok(PowerFit {
        weights_sq,
        beta,
        head: LogisticHead::new(rows, bias)?,
        final_loss: loss,
    })
}

fn logits(d2: &[f64], theta: &[f64]) -> Vec<f64> {
    d2.iter()
        .enumerate()
        .map(|(j, d)| -theta[0] * d + if j == 0 { 0.0 } else { theta[j] })
        .collect()
}

const FORMAT_TAG: &str = "# ttvd-columnar v1";

/// Header line, then `label x_1 .. x_m` per sample.
pub fn write_labeled(set: &LabeledSet, seed: u64) -> String {
    let dims = set.inputs.first().map_or(0, Vec::len);
    let mut out = format!(
        "{FORMAT_TAG}\ndims {dims} classes {} seed {seed} samples {}\n",
        set.n_classes,
        set.len()
    );
    for (x, y) in set.inputs.iter().zip(&set.labels) {
        out.push_str(&y.to_string());
        for v in x {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`write_labeled`]; returns the set and its seed.
pub fn read_labeled(text: &str) -> Result<(LabeledSet, u64)> {
    let (header, rows) = read_columnar(text, 1)?;
    let mut set = LabeledSet {
        inputs: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        n_classes: header.classes,
    };
    for (keys, x) in rows {
        set.labels.push(keys[0]);
        set.inputs.push(x);
    }
    Ok((set, header.seed))
}

/// Like [`write_labeled`] with a leading batch column.
pub fn write_stream(batches: &[Batch], n_classes: usize, seed: u64) -> String {
    let dims = batches
        .iter()
        .find_map(|b| b.inputs.first())
        .map_or(0, Vec::len);
    let total: usize = batches.iter().map(Batch::len).sum();
    let mut out = format!("{FORMAT_TAG}\ndims {dims} classes {n_classes} seed {seed} samples {total}\n");
    for (t, b) in batches.iter().enumerate() {
        for (x, y) in b.inputs.iter().zip(&b.labels) {
            out.push_str(&format!("{t} {y}"));
            for v in x {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_stream(text: &str) -> Result<(Vec<Batch>, usize, u64)> {
    let (header, rows) = read_columnar(text, 2)?;
    let mut batches: Vec<Batch> = Vec::new();
    for (keys, x) in rows {
        let t = keys[0];
        if t + 1 < batches.len() || t > batches.len() {
            return Err(SimError::Parse {
                line: 0,
                msg: format!("batch index {t} out of order"),
            });
        }
        if t == batches.len() {
            batches.push(Batch::new(Vec::new(), Vec::new()));
        }
        batches[t].inputs.push(x);
        batches[t].labels.push(keys[1]);
    }
    Ok((batches, header.classes, header.seed))
}

struct Header {
    dims: usize,
    classes: usize,
    seed: u64,
}

type Rows = Vec<(Vec<usize>, Vec<f64>)>;

fn read_columnar(text: &str, n_keys: usize) -> Result<(Header, Rows)> {
    let err = |line: usize, msg: &str| SimError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == FORMAT_TAG => {}
        _ => return Err(err(1, "missing format tag")),
    }
    let (_, head) = lines.next().ok_or_else(|| err(2, "missing header"))?;
    let fields: Vec<&str> = head.split_whitespace().collect();
    let field = |name: &str| -> Result<u64> {
        fields
            .iter()
            .position(|f| *f == name)
            .and_then(|i| fields.get(i + 1))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(2, &format!("header lacks {name}")))
    };
    let header = Header {
        dims: field("dims")? as usize,
        classes: field("classes")? as usize,
        seed: field("seed")?,
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let keys = (0..n_keys)
            .map(|_| it.next().and_then(|v| v.parse::<usize>().ok()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err(i + 1, "bad index column"))?;
        if keys[n_keys - 1] >= header.classes {
            return Err(err(i + 1, "label out of range"));
        }
        let x = it
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(i + 1, "bad number"))?;
        if x.len() != header.dims {
            return Err(err(i + 1, "wrong number of coordinates"));
        }
        rows.push((keys, x));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StreamConfig {
        StreamConfig {
            n_classes: 3,
            input_dim: 4,
            feature_dim: 2,
            n_train_per_class: 20,
            batch_size: 8,
            n_batches: 3,
            ..StreamConfig::default()
        }
    }

    #[test]
    fn zero_spread_gives_class_means() {
        let cfg = StreamConfig {
            class_cov_scale: 0.0,
            ..small()
        };
        let w = World::new(&cfg).unwrap();
        let src = w.source();
        for (x, &y) in src.inputs.iter().zip(&src.labels) {
            assert_eq!(x, &w.means[y]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        assert_eq!(gen_source(&cfg).unwrap(), gen_source(&cfg).unwrap());
        assert_eq!(gen_stream(&cfg).unwrap(), gen_stream(&cfg).unwrap());
        let other = StreamConfig { seed: 1, ..small() };
        assert_ne!(gen_source(&cfg).unwrap(), gen_source(&other).unwrap());
    }

    #[test]
    fn stream_settings_do_not_touch_source() {
        let a = small();
        let b = StreamConfig {
            label_shift_alpha: Some(0.1),
            batch_size: 3,
            ..small()
        };
        assert_eq!(gen_source(&a).unwrap(), gen_source(&b).unwrap());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            StreamConfig { n_classes: 1, ..small() },
            StreamConfig { input_dim: 3, ..small() },
            StreamConfig { batch_size: 0, ..small() },
            StreamConfig { label_shift_alpha: Some(0.0), ..small() },
            StreamConfig {
                corruption: Corruption {
                    kind: CorruptionKind::GaussianNoise,
                    severity: 9,
                },
                ..small()
            },
        ] {
            assert!(matches!(World::new(&cfg), Err(SimError::InvalidConfig(_))));
        }
    }

    #[test]
    fn subsample_keeps_at_least_one_per_class() {
        let src = gen_source(&small()).unwrap();
        let s = src.subsample_per_class(0.001);
        assert_eq!(s.len(), 3);
        assert_eq!(s.labels, vec![0, 1, 2]);
        assert_eq!(src.subsample_per_class(1.0), src);
    }

    #[test]
    fn missing_class_is_reported() {
        let src = LabeledSet {
            inputs: vec![vec![0.0, 0.0]],
            labels: vec![0],
            n_classes: 2,
        };
        let fe = FeatureExtractor::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(estimate_sites(&src, &fe), Err(SimError::MissingClass(1)));
    }

    #[test]
    fn columnar_roundtrip() {
        let cfg = small();
        let src = gen_source(&cfg).unwrap();
        let (back, seed) = read_labeled(&write_labeled(&src, 7)).unwrap();
        assert_eq!(back, src);
        assert_eq!(seed, 7);
        let st = gen_stream(&cfg).unwrap();
        let (back, k, _) = read_stream(&write_stream(&st, 3, 0)).unwrap();
        assert_eq!(back, st);
        assert_eq!(k, 3);
        assert!(read_labeled("nonsense").is_err());
    }

    #[test]
    fn dirichlet_is_a_distribution() {
        let mut rng = rng_for(3, 9);
        for alpha in [1e-3, 0.1, 1.0, 1e6] {
            let p = dirichlet(alpha, 5, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
