//! Entropy-driven test-time adaptation of a per-dimension affine feature map.
//!
//! The model is `z = scale * h + shift` on top of a frozen linear projection
//! `h = A x`. Each incoming batch is first classified with the current
//! parameters, then the mean Shannon entropy of the soft labels is reduced by
//! plain gradient descent on `scale` and `shift`.
//!
//! Soft labels are `softmax((q + eps) / tau)` where `q` is the per-cell score
//! of the active [`Mode`]: negative Euclidean distance for the Voronoi
//! diagram, or the cluster influence for the cluster-induced diagrams. The
//! hard prediction of every sample is exactly the diagram assignment.
//!
//! Gradients are analytic. With `r_k = dH/dq_k = -p_k (log p_k + H) / tau`
//! and `z_a` the feature of view `a`, every score is a sum of radial terms,
//! so `dH/dz_a = sum_k r_k c_ka (z_a - mu_ka)` where `c_ka` is
//!
//! | mode        | `c_ka`                              |
//! |-------------|-------------------------------------|
//! | VD          | `-1 / d`                            |
//! | CIVD        | `-abs(g) d^(g - 2)`                 |
//! | power kinds | `-2 abs(g) (d^2 - v_k^2)^(g - 1)`   |
//!
//! and is zero wherever the distance floor is active.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentError, AugmentationFamily};
use crate::filter::{self, FilterReport};
use crate::geometry::{
    argmax, distance_term, power_term, sq_dist, ClusterSiteSet, FeaturePoint, GeometryError,
    InfluenceConfig,
};
use crate::par::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("input has length {found}, expected {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("invalid adaptation config: {0}")]
    InvalidConfig(String),
    #[error("keep mask has length {found}, batch has {expected} samples")]
    MaskLength { expected: usize, found: usize },
    #[error("clusters hold {sites} sites but the augmentation family has {family} members")]
    ViewMismatch { sites: usize, family: usize },
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

pub type Result<T> = std::result::Result<T, AdaptError>;

/// Frozen per-view feature statistics with batch blending.
///
/// At test time view `a` of a batch is standardised with a blend of batch and
/// source statistics, then mapped back to source scale:
/// `h' = m + (h - m_b) * sqrt((s^2 + eps) / (s_b^2 + eps))` where
/// `m_b = w mean(h) + (1 - w) m` and `s_b^2 = w var(h) + (1 - w) s^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStage {
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    batch_weight: f64,
    eps: f64,
}

impl NormStage {
    pub const EPS: f64 = 1e-5;

    /// Source statistics of every view of `inputs` under `fe`'s projection.
    pub fn fit(
        fe: &FeatureExtractor,
        inputs: &[Vec<f64>],
        fam: &AugmentationFamily,
        batch_weight: f64,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(AdaptError::InvalidConfig("no source samples".into()));
        }
        if !(0.0..=1.0).contains(&batch_weight) {
            return Err(AdaptError::InvalidConfig(format!(
                "batch weight {batch_weight} outside [0, 1]"
            )));
        }
        let mut means = Vec::with_capacity(fam.len());
        let mut vars = Vec::with_capacity(fam.len());
        for a in 0..fam.len() {
            let hs = inputs
                .iter()
                .map(|x| fe.project(&fam.apply(a, x)?))
                .collect::<Result<Vec<_>>>()?;
            let (m, v) = moments(&hs);
            means.push(m);
            vars.push(v);
        }
        Ok(Self {
            means,
            vars,
            batch_weight,
            eps: Self::EPS,
        })
    }

    pub fn batch_weight(&self) -> f64 {
        self.batch_weight
    }

    pub fn views(&self) -> usize {
        self.means.len()
    }

    fn apply(&self, a: usize, hs: &mut [Vec<f64>]) {
        let w = self.batch_weight;
        if w == 0.0 || hs.is_empty() {
            return;
        }
        let (bm, bv) = moments(hs);
        let (m, v) = (&self.means[a], &self.vars[a]);
        let blend: Vec<(f64, f64)> = (0..m.len())
            .map(|j| {
                let mean = w * bm[j] + (1.0 - w) * m[j];
                let var = w * bv[j] + (1.0 - w) * v[j];
                (mean, ((v[j] + self.eps) / (var + self.eps)).sqrt())
            })
            .collect();
        for h in hs.iter_mut() {
            for (j, x) in h.iter_mut().enumerate() {
                *x = m[j] + (*x - blend[j].0) * blend[j].1;
            }
        }
    }
}

/// Per-coordinate mean and population variance.
fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for j in 0..dim {
            let d = r[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Frozen linear map followed by a trainable per-dimension affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    in_dim: usize,
    out_dim: usize,
    frozen: Vec<f64>,
    scale: Vec<f64>,
    shift: Vec<f64>,
    norm: Option<NormStage>,
}

impl FeatureExtractor {
    /// `frozen_map` has one row per output feature. Starts at scale 1, shift 0.
    pub fn new(frozen_map: Vec<Vec<f64>>) -> Result<Self> {
        let out_dim = frozen_map.len();
        let in_dim = frozen_map.first().map_or(0, Vec::len);
        if out_dim == 0 || in_dim == 0 {
            return Err(AdaptError::InvalidConfig("empty frozen map".into()));
        }
        if let Some(r) = frozen_map.iter().find(|r| r.len() != in_dim) {
            return Err(AdaptError::InputDim {
                expected: in_dim,
                found: r.len(),
            });
        }
        if frozen_map.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite.into());
        }
        Ok(Self {
            in_dim,
            out_dim,
            frozen: frozen_map.concat(),
            scale: vec![1.0; out_dim],
            shift: vec![0.0; out_dim],
            norm: None,
        })
    }

    pub fn with_normalization(mut self, norm: NormStage) -> Self {
        self.norm = Some(norm);
        self
    }

    pub fn normalization(&self) -> Option<&NormStage> {
        self.norm.as_ref()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn frozen_row(&self, j: usize) -> &[f64] {
        &self.frozen[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn set_affine(&mut self, scale: Vec<f64>, shift: Vec<f64>) -> Result<()> {
        for v in [&scale, &shift] {
            if v.len() != self.out_dim {
                return Err(AdaptError::InputDim {
                    expected: self.out_dim,
                    found: v.len(),
                });
            }
        }
        self.scale = scale;
        self.shift = shift;
        Ok(())
    }

    /// `A x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(AdaptError::InputDim {
                expected: self.in_dim,
                found: x.len(),
            });
        }
        Ok(self
            .frozen
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `scale * h + shift`.
    pub fn affine(&self, h: &[f64]) -> Vec<f64> {
        h.iter()
            .zip(&self.scale)
            .zip(&self.shift)
            .map(|((h, s), t)| s * h + t)
            .collect()
    }

    /// Single-sample features under source statistics: `scale * (A x) + shift`.
    pub fn forward(&self, x: &[f64]) -> Result<FeaturePoint> {
        Ok(FeaturePoint::new(self.affine(&self.project(x)?))?)
    }

    /// Frozen features of the first `n_views` family members of every
    /// input, normalised with batch statistics when a stage is attached.
    pub fn frozen_views(
        &self,
        inputs: &[Vec<f64>],
        fam: &AugmentationFamily,
        n_views: usize,
        exec: Exec,
    ) -> Result<BatchViews> {
        let mut per_view: Vec<Vec<Vec<f64>>> = (0..n_views)
            .map(|a| {
                exec.map(inputs, |x| self.project(&fam.apply(a, x)?))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        if let Some(norm) = &self.norm {
            for (a, hs) in per_view.iter_mut().enumerate() {
                if a < norm.views() {
                    norm.apply(a, hs);
                }
            }
        }
        let mut samples: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n_views); inputs.len()];
        for hs in per_view {
            for (s, h) in samples.iter_mut().zip(hs) {
                s.push(h);
            }
        }
        Ok(BatchViews { samples })
    }
}

/// Frozen features of one batch, indexed `[sample][view]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    samples: Vec<Vec<Vec<f64>>>,
}

impl BatchViews {
    pub fn new(samples: Vec<Vec<Vec<f64>>>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[Vec<f64>] {
        &self.samples[i]
    }

    /// Every view of every sample passed through the affine map.
    pub fn features(&self, fe: &FeatureExtractor) -> Vec<Vec<Vec<f64>>> {
        self.samples
            .iter()
            .map(|s| s.iter().map(|h| fe.affine(h)).collect())
            .collect()
    }
}

/// Class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
}

impl SoftLabel {
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

/// Which diagram scores and assigns samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Nearest site of the unrotated view.
    Vd,
    /// Cluster influence on distances.
    Civd,
    /// Cluster influence on power distances.
    Cipd,
    /// Cluster influence on squared distances, the zero-weight power kind.
    CivdSquared,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vd => "vd",
            Mode::Civd => "civd",
            Mode::Cipd => "cipd",
            Mode::CivdSquared => "civd_sq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vd" => Some(Mode::Vd),
            "civd" => Some(Mode::Civd),
            "cipd" => Some(Mode::Cipd),
            "civd_sq" | "civd-sq" => Some(Mode::CivdSquared),
            _ => None,
        }
    }

    fn uses_views(self) -> bool {
        self != Mode::Vd
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub tau: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub influence: InfluenceConfig,
    pub steps_per_batch: usize,
    pub mode: Mode,
    pub filtering: bool,
    pub exec: Exec,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            epsilon: 1e-12,
            learning_rate: 0.005,
            influence: InfluenceConfig::default(),
            steps_per_batch: 1,
            mode: Mode::Cipd,
            filtering: true,
            exec: Exec::default(),
        }
    }
}

impl AdaptConfig {
    /// `learning_rate = 0` is accepted and gives a frozen run.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AdaptError::InvalidConfig(msg));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            ));
        }
        if self.steps_per_batch == 0 {
            return bad("steps per batch must be at least 1".into());
        }
        self.influence.validate()?;
        Ok(())
    }
}

/// `softmax(scores / tau)` via a max-shifted log-sum-exp.
pub fn soft_label_from_scores(scores: &[f64], tau: f64, epsilon: f64) -> Result<SoftLabel> {
    Ok(SoftLabel {
        probs: log_softmax(scores, tau, epsilon)?
            .into_iter()
            .map(f64::exp)
            .collect(),
    })
}

fn log_softmax(scores: &[f64], tau: f64, epsilon: f64) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(GeometryError::NonFinite.into());
    }
    // Stabilising by `max + epsilon` cancels `epsilon` exactly, so it never
    // reaches the arithmetic and the labels do not depend on it bitwise.
    let _ = epsilon;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scores.iter().map(|s| (s - max) / tau).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    Ok(shifted.iter().map(|s| s - lse).collect())
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn vd_loss(y: &SoftLabel) -> f64 {
    -y.probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Everything computed for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub scores: Vec<f64>,
    pub prediction: usize,
    pub label: SoftLabel,
    pub entropy: f64,
}

/// Raw scores (before `eps`) and the prediction of one sample.
///
/// `zs` holds one feature per view. VD reads view 0 only. The prediction is
/// the lowest-index argmax of the scores, which is the diagram assignment.
pub fn sample_scores(
    zs: &[&[f64]],
    sites: &ClusterSiteSet,
    mode: Mode,
    cfg: &InfluenceConfig,
) -> Result<(Vec<f64>, usize)> {
    let d2 = sq_table(zs, sites, mode)?;
    let scores: Vec<f64> = match mode {
        Mode::Vd => d2.iter().map(|r| -r[0].sqrt()).collect(),
        Mode::Civd => d2
            .iter()
            .map(|r| cfg.polarity() * r.iter().map(|x| distance_term(x.sqrt(), cfg)).sum::<f64>())
            .collect(),
        Mode::CivdSquared | Mode::Cipd => {
            let w = power_weights(sites, mode)?;
            d2.iter()
                .zip(&w)
                .map(|(r, w)| cfg.polarity() * r.iter().map(|x| power_term(*x, *w, cfg)).sum::<f64>())
                .collect()
        }
    };
    let prediction = argmax(&scores);
    Ok((scores, prediction))
}

fn power_weights(sites: &ClusterSiteSet, mode: Mode) -> Result<Vec<f64>> {
    Ok(match mode {
        Mode::Cipd => sites
            .weights_sq()
            .ok_or(GeometryError::MissingWeights)?
            .to_vec(),
        _ => vec![0.0; sites.len()],
    })
}

/// Squared distances `[cell][view]`.
fn sq_table(zs: &[&[f64]], sites: &ClusterSiteSet, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let n_views = if mode.uses_views() {
        sites.uniform_size().ok_or(AdaptError::ViewMismatch {
            sites: 0,
            family: zs.len(),
        })?
    } else {
        1
    };
    if zs.len() < n_views {
        return Err(AdaptError::ViewMismatch {
            sites: n_views,
            family: zs.len(),
        });
    }
    for z in &zs[..n_views] {
        if z.len() != sites.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: sites.dim(),
                found: z.len(),
            }
            .into());
        }
    }
    Ok(sites
        .clusters()
        .iter()
        .map(|c| (0..n_views).map(|a| sq_dist(zs[a], c.site(a))).collect())
        .collect())
}

/// Scores, soft label and entropy of one sample.
pub fn eval_sample(
    zs: &[&[f64]],
    sites: &ClusterSiteSet,
    cfg: &AdaptConfig,
) -> Result<SampleEval> {
    let (scores, prediction) = sample_scores(zs, sites, cfg.mode, &cfg.influence)?;
    let logp = log_softmax(&scores, cfg.tau, cfg.epsilon)?;
    let label = SoftLabel {
        probs: logp.iter().map(|l| l.exp()).collect(),
    };
    let entropy = vd_loss(&label);
    Ok(SampleEval {
        scores,
        prediction,
        label,
        entropy,
    })
}

/// Entropy of one sample and its gradient with respect to each view's feature.
fn sample_entropy_grad(
    zs: &[&[f64]],
    sites: &ClusterSiteSet,
    cfg: &AdaptConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let eval = eval_sample(zs, sites, cfg)?;
    let h = eval.entropy;
    let d2 = sq_table(zs, sites, cfg.mode)?;
    let g = cfg.influence.gamma;
    let floor = cfg.influence.distance_floor;
    let weights = power_weights(sites, cfg.mode)?;
    let n_views = d2[0].len();
    let dim = sites.dim();
    let mut grads = vec![vec![0.0; dim]; n_views];
    for (k, row) in d2.iter().enumerate() {
        let p = eval.label.probs[k];
        if p == 0.0 {
            continue;
        }
        let r = -p * (p.ln() + h) / cfg.tau;
        for (a, &dsq) in row.iter().enumerate() {
            let coef = match cfg.mode {
                Mode::Vd => {
                    let d = dsq.sqrt();
                    if d > floor {
                        -1.0 / d
                    } else {
                        0.0
                    }
                }
                Mode::Civd => {
                    let d = dsq.sqrt();
                    if d > floor {
                        -g.abs() * d.powf(g - 2.0)
                    } else {
                        0.0
                    }
                }
                Mode::Cipd | Mode::CivdSquared => {
                    let base = dsq - weights[k];
                    if base > floor {
                        -2.0 * g.abs() * base.powf(g - 1.0)
                    } else {
                        0.0
                    }
                }
            };
            if coef == 0.0 {
                continue;
            }
            let site = sites.cluster(k).site(a);
            for ((gj, z), mu) in grads[a].iter_mut().zip(zs[a]).zip(site) {
                *gj += r * coef * (z - mu);
            }
        }
    }
    Ok((h, grads))
}

/// Mean entropy over kept samples and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_scale: Vec<f64>,
    pub grad_shift: Vec<f64>,
}

/// Loss and gradient on precomputed frozen views.
pub fn views_loss_and_grad(
    fe: &FeatureExtractor,
    views: &BatchViews,
    sites: &ClusterSiteSet,
    cfg: &AdaptConfig,
    keep: &[bool],
) -> Result<LossGrad> {
    if keep.len() != views.len() {
        return Err(AdaptError::MaskLength {
            expected: views.len(),
            found: keep.len(),
        });
    }
    let dim = fe.out_dim();
    let mut out = LossGrad {
        loss: 0.0,
        grad_scale: vec![0.0; dim],
        grad_shift: vec![0.0; dim],
    };
    let kept: Vec<usize> = (0..views.len()).filter(|i| keep[*i]).collect();
    if kept.is_empty() {
        return Ok(out);
    }
    let parts = cfg.exec.map(&kept, |&i| {
        let hs = views.sample(i);
        let zs: Vec<Vec<f64>> = hs.iter().map(|h| fe.affine(h)).collect();
        let zr: Vec<&[f64]> = zs.iter().map(Vec::as_slice).collect();
        sample_entropy_grad(&zr, sites, cfg).map(|(h, g)| (i, h, g))
    });
    let n = kept.len() as f64;
    for part in parts {
        let (i, h, grads) = part?;
        out.loss += h;
        for (a, g) in grads.iter().enumerate() {
            let hview = &views.sample(i)[a];
            for j in 0..dim {
                out.grad_shift[j] += g[j];
                out.grad_scale[j] += g[j] * hview[j];
            }
        }
    }
    out.loss /= n;
    out.grad_scale.iter_mut().for_each(|x| *x /= n);
    out.grad_shift.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Loss and gradient for raw inputs. Views come from `fam`.
pub fn batch_loss_and_grad(
    fe: &FeatureExtractor,
    inputs: &[Vec<f64>],
    sites: &ClusterSiteSet,
    fam: &AugmentationFamily,
    cfg: &AdaptConfig,
    keep: &[bool],
) -> Result<LossGrad> {
    let views = fe.frozen_views(inputs, fam, view_count(sites, fam, cfg.mode)?, cfg.exec)?;
    views_loss_and_grad(fe, &views, sites, cfg, keep)
}

fn view_count(sites: &ClusterSiteSet, fam: &AugmentationFamily, mode: Mode) -> Result<usize> {
    let a = sites.uniform_size().unwrap_or(0);
    if mode.uses_views() && a != fam.len() {
        return Err(AdaptError::ViewMismatch {
            sites: a,
            family: fam.len(),
        });
    }
    Ok(if mode.uses_views() { a } else { 1 })
}

/// One gradient-descent update of the affine parameters.
pub fn adapt_step(fe: &mut FeatureExtractor, grads: &LossGrad, learning_rate: f64) -> Result<()> {
    if grads
        .grad_scale
        .iter()
        .chain(&grads.grad_shift)
        .any(|g| !g.is_finite())
    {
        return Err(AdaptError::NonFiniteGradient);
    }
    for (s, g) in fe.scale.iter_mut().zip(&grads.grad_scale) {
        *s -= learning_rate * g;
    }
    for (t, g) in fe.shift.iter_mut().zip(&grads.grad_shift) {
        *t -= learning_rate * g;
    }
    Ok(())
}

/// What happened on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub predictions: Vec<usize>,
    pub confidences: Vec<f64>,
    pub kept: Vec<bool>,
    /// Loss over kept samples before this batch's update.
    pub mean_loss: f64,
    pub kept_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: Mode,
    pub filtering: bool,
    pub records: Vec<BatchRecord>,
}

impl RunTrace {
    pub fn n_samples(&self) -> usize {
        self.records.iter().map(|r| r.predictions.len()).sum()
    }
}

/// Keep mask from the diagram pair that matches `mode`.
pub fn filter_features(
    zs: &[Vec<Vec<f64>>],
    sites: &ClusterSiteSet,
    cfg: &AdaptConfig,
) -> Result<FilterReport> {
    let report = match cfg.mode {
        Mode::Vd => {
            let power = sites.primary_power_sites()?;
            let first: Vec<Vec<f64>> = zs.iter().map(|v| v[0].clone()).collect();
            filter::filter_batch_power(&first, &power, cfg.exec)?
        }
        _ => filter::filter_batch_views(zs, sites, &cfg.influence, cfg.exec)?,
    };
    Ok(report)
}

/// Online infer-then-adapt loop over `batches` of raw inputs.
///
/// Each batch is classified with the current parameters before any update
/// on it. With filtering on, samples where the weighted and unweighted
/// diagrams disagree are left out of the loss; they are still predicted.
pub fn run_stream<B: AsRef<[Vec<f64>]>>(
    fe: &mut FeatureExtractor,
    batches: &[B],
    sites: &ClusterSiteSet,
    fam: &AugmentationFamily,
    cfg: &AdaptConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    let n_views = view_count(sites, fam, cfg.mode)?;
    let mut records = Vec::with_capacity(batches.len());
    for (t, batch) in batches.iter().enumerate() {
        let inputs = batch.as_ref();
        let views = fe.frozen_views(inputs, fam, n_views, cfg.exec)?;
        let zs = views.features(fe);
        let evals = cfg
            .exec
            .map(&zs, |z| {
                let zr: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
                eval_sample(&zr, sites, cfg)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let kept = if cfg.filtering && !zs.is_empty() {
            filter_features(&zs, sites, cfg)?.keep_mask
        } else {
            vec![true; inputs.len()]
        };
        let n_kept = kept.iter().filter(|k| **k).count();
        let mut mean_loss = if n_kept == 0 {
            0.0
        } else {
            evals
                .iter()
                .zip(&kept)
                .filter(|(_, k)| **k)
                .map(|(e, _)| e.entropy)
                .sum::<f64>()
                / n_kept as f64
        };
        if !mean_loss.is_finite() {
            return Err(AdaptError::NonFiniteLoss { batch: t });
        }
        if cfg.learning_rate > 0.0 && n_kept > 0 {
            for step in 0..cfg.steps_per_batch {
                let lg = views_loss_and_grad(fe, &views, sites, cfg, &kept)?;
                if !lg.loss.is_finite() {
                    return Err(AdaptError::NonFiniteLoss { batch: t });
                }
                if step == 0 {
                    mean_loss = lg.loss;
                }
                adapt_step(fe, &lg, cfg.learning_rate)?;
            }
        }
        records.push(BatchRecord {
            batch_index: t,
            predictions: evals.iter().map(|e| e.prediction).collect(),
            confidences: evals.iter().map(|e| e.label.confidence()).collect(),
            kept_fraction: if inputs.is_empty() {
                1.0
            } else {
                n_kept as f64 / inputs.len() as f64
            },
            kept,
            mean_loss,
        });
    }
    Ok(RunTrace {
        mode: cfg.mode,
        filtering: cfg.filtering,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_fe(dim: usize) -> FeatureExtractor {
        FeatureExtractor::new(
            (0..dim)
                .map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn forward_is_affine_of_projection() {
        let mut fe = identity_fe(2);
        assert_eq!(&*fe.forward(&[3.0, -1.0]).unwrap(), &[3.0, -1.0]);
        fe.set_affine(vec![2.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(&*fe.forward(&[0.0, 0.0]).unwrap(), &[1.0, 1.0]);
        assert!(fe.forward(&[0.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let y = soft_label_from_scores(&[-1.0, -1.0], 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(y.probs[0], 0.5, epsilon = 1e-15);
        let y = soft_label_from_scores(&[0.0, -3f64.ln()], 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(y.probs[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(vd_loss(&y), 0.562335, epsilon = 1e-6);
        assert!(soft_label_from_scores(&[f64::NAN, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn entropy_extremes() {
        let one_hot = SoftLabel {
            probs: vec![0.0, 1.0, 0.0],
        };
        assert_eq!(vd_loss(&one_hot), 0.0);
        let uniform = SoftLabel {
            probs: vec![0.1; 10],
        };
        assert_abs_diff_eq!(vd_loss(&uniform), 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn all_filtered_gives_zero() {
        let fe = identity_fe(2);
        let sites = ClusterSiteSet::new(vec![vec![vec![0.0, 0.0]], vec![vec![2.0, 0.0]]]).unwrap();
        let cfg = AdaptConfig {
            mode: Mode::Vd,
            ..AdaptConfig::default()
        };
        let fam = AugmentationFamily::identity();
        let lg = batch_loss_and_grad(&fe, &[vec![0.3, 0.1]], &sites, &fam, &cfg, &[false]).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad_scale.iter().chain(&lg.grad_shift).all(|g| *g == 0.0));
    }

    #[test]
    fn adapt_step_moves_against_gradient() {
        let mut fe = identity_fe(3);
        let lg = LossGrad {
            loss: 0.0,
            grad_scale: vec![0.0; 3],
            grad_shift: vec![1.0; 3],
        };
        adapt_step(&mut fe, &lg, 0.001).unwrap();
        assert_eq!(fe.shift(), &[-0.001; 3]);
        assert_eq!(fe.scale(), &[1.0; 3]);
        let bad = LossGrad {
            grad_shift: vec![f64::NAN; 3],
            ..lg
        };
        assert_eq!(adapt_step(&mut fe, &bad, 0.1), Err(AdaptError::NonFiniteGradient));
    }

    #[test]
    fn empty_stream_gives_empty_trace() {
        let mut fe = identity_fe(2);
        let sites = ClusterSiteSet::new(vec![vec![vec![0.0, 0.0]], vec![vec![2.0, 0.0]]]).unwrap();
        let cfg = AdaptConfig {
            mode: Mode::Civd,
            filtering: false,
            ..AdaptConfig::default()
        };
        let batches: Vec<Vec<Vec<f64>>> = Vec::new();
        let trace = run_stream(&mut fe, &batches, &sites, &AugmentationFamily::identity(), &cfg).unwrap();
        assert!(trace.records.is_empty());
    }

    #[test]
    fn normalization_with_zero_weight_is_identity() {
        let fe = identity_fe(2);
        let src = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![0.0, 0.5]];
        let fam = AugmentationFamily::identity();
        let norm = NormStage::fit(&fe, &src, &fam, 0.0).unwrap();
        let fe = fe.with_normalization(norm);
        let v = fe.frozen_views(&[vec![5.0, 5.0]], &fam, 1, Exec::Sequential).unwrap();
        assert_eq!(v.sample(0)[0], vec![5.0, 5.0]);
    }
}
