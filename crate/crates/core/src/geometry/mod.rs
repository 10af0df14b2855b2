//! Assignment queries and influence functions for Voronoi-type diagrams.
//!
//! Four partitions of feature space are supported:
//!
//! | diagram | cell of `z`                                        |
//! |---------|----------------------------------------------------|
//! | VD      | `argmin_k d(z, mu_k)`                              |
//! | PD      | `argmin_k d(z, mu_k)^2 - v_k^2`                    |
//! | CIVD    | `argmax_k -sign(g) sum_a d(mu_k^a, z)^g`           |
//! | CIPD    | `argmax_k -sign(g) sum_a (d(mu_k^a, z)^2 - v_k^2)^g` |
//!
//! `d` is Euclidean. Ties always resolve to the lowest cell index. Before
//! being raised to `g`, every base is clamped below by
//! [`InfluenceConfig::distance_floor`].
//!
//! Power weights are stored as signed squares `v_k^2`: converting a
//! logistic head can produce negative values and the power distance stays
//! well defined.
//!
//! The cluster-induced queries come in two flavours. The plain form takes
//! one point `z` and compares it with every site of a cluster. The `_views`
//! form takes one point per cluster member, so site `a` of every cluster is
//! compared with view `a`. This is how rotation-expanded sites are used at
//! inference time. The plain form is the special case where all views are
//! equal.

mod cells;

pub use cells::{compute_cells_2d, BoundingBox, CellPolygon2D};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("site set is empty")]
    EmptySiteSet,
    #[error("sites must have at least one coordinate")]
    ZeroDimension,
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("non-finite coordinate or weight")]
    NonFinite,
    #[error("power weights are required for this query")]
    MissingWeights,
    #[error("expected {expected} weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("influence exponent must be finite and nonzero, got {0}")]
    InvalidGamma(f64),
    #[error("distance floor must be finite and positive, got {0}")]
    InvalidFloor(f64),
    #[error("cluster {cluster} has {expected} sites but {found} views were given")]
    ViewCount {
        cluster: usize,
        expected: usize,
        found: usize,
    },
    #[error("planar cells need 2-d sites, got dimension {0}")]
    NotPlanar(usize),
    #[error("bounding box must have positive, finite extent")]
    InvalidBox,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A point of feature space with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint(Vec<f64>);

impl FeaturePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self(coords))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for FeaturePoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `K >= 1` sites of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    dim: usize,
    data: Vec<f64>,
}

impl SiteSet {
    pub fn new(sites: Vec<Vec<f64>>) -> Result<Self> {
        let dim = sites.first().ok_or(GeometryError::EmptySiteSet)?.len();
        if dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        let mut data = Vec::with_capacity(dim * sites.len());
        for s in &sites {
            check_dim(dim, s.len())?;
            if s.iter().any(|c| !c.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
            data.extend_from_slice(s);
        }
        Ok(Self { dim, data })
    }

    /// Number of sites.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn site(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Sites scaled by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }
}

/// Sites with signed squared power weights `v_k^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSiteSet {
    pub base: SiteSet,
    weights_sq: Vec<f64>,
}

impl PowerSiteSet {
    /// Builds from plain weights `v_k`; they are squared on the way in.
    pub fn with_weights(base: SiteSet, weights: &[f64]) -> Result<Self> {
        Self::with_squared_weights(base, weights.iter().map(|v| v * v).collect())
    }

    pub fn with_squared_weights(base: SiteSet, weights_sq: Vec<f64>) -> Result<Self> {
        if weights_sq.len() != base.len() {
            return Err(GeometryError::WeightCount {
                expected: base.len(),
                found: weights_sq.len(),
            });
        }
        if weights_sq.iter().any(|w| !w.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { base, weights_sq })
    }

    /// Zero weights: the power diagram coincides with the Voronoi diagram.
    pub fn unweighted(base: SiteSet) -> Self {
        let weights_sq = vec![0.0; base.len()];
        Self { base, weights_sq }
    }

    pub fn weights_sq(&self) -> &[f64] {
        &self.weights_sq
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `d(z, mu_k)^2 - v_k^2` for every cell.
    pub fn power_distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.base.dim(), z.len())?;
        Ok(self
            .base
            .iter()
            .zip(&self.weights_sq)
            .map(|(s, w)| sq_dist(z, s) - w)
            .collect())
    }
}

/// `K` clusters of sites plus optional signed squared weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSiteSet {
    clusters: Vec<SiteSet>,
    weights_sq: Option<Vec<f64>>,
}

impl ClusterSiteSet {
    pub fn new(clusters: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(GeometryError::EmptySiteSet);
        }
        let mut out = Vec::with_capacity(clusters.len());
        let mut dim = None;
        for (k, c) in clusters.into_iter().enumerate() {
            if c.is_empty() {
                return Err(GeometryError::EmptyCluster(k));
            }
            let set = SiteSet::new(c)?;
            match dim {
                None => dim = Some(set.dim()),
                Some(d) => check_dim(d, set.dim())?,
            }
            out.push(set);
        }
        Ok(Self {
            clusters: out,
            weights_sq: None,
        })
    }

    /// One singleton cluster per site.
    pub fn singletons(sites: &SiteSet) -> Self {
        Self {
            clusters: sites
                .iter()
                .map(|s| SiteSet {
                    dim: sites.dim(),
                    data: s.to_vec(),
                })
                .collect(),
            weights_sq: None,
        }
    }

    pub fn with_weights(self, weights: &[f64]) -> Result<Self> {
        self.with_squared_weights(weights.iter().map(|v| v * v).collect())
    }

    pub fn with_squared_weights(mut self, weights_sq: Vec<f64>) -> Result<Self> {
        if weights_sq.len() != self.clusters.len() {
            return Err(GeometryError::WeightCount {
                expected: self.clusters.len(),
                found: weights_sq.len(),
            });
        }
        if weights_sq.iter().any(|w| !w.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        self.weights_sq = Some(weights_sq);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights_sq = None;
        self
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.clusters[0].dim()
    }

    pub fn cluster(&self, k: usize) -> &SiteSet {
        &self.clusters[k]
    }

    pub fn clusters(&self) -> &[SiteSet] {
        &self.clusters
    }

    pub fn weights_sq(&self) -> Option<&[f64]> {
        self.weights_sq.as_deref()
    }

    fn require_weights(&self) -> Result<&[f64]> {
        self.weights_sq().ok_or(GeometryError::MissingWeights)
    }

    /// Member `a` of every cluster as a plain site set.
    pub fn member(&self, a: usize) -> SiteSet {
        let dim = self.dim();
        let mut data = Vec::with_capacity(dim * self.len());
        for c in &self.clusters {
            data.extend_from_slice(c.site(a));
        }
        SiteSet { dim, data }
    }

    /// The size every cluster shares, if they all have the same size.
    pub fn uniform_size(&self) -> Option<usize> {
        let a = self.clusters[0].len();
        self.clusters.iter().all(|c| c.len() == a).then_some(a)
    }

    /// Power sites from member 0 of each cluster and the cluster weights.
    pub fn primary_power_sites(&self) -> Result<PowerSiteSet> {
        let w = self.require_weights()?;
        PowerSiteSet::with_squared_weights(self.member(0), w.to_vec())
    }
}

/// Logistic regression head `logits = W z + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticHead {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LogisticHead {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != bias.len() {
            return Err(GeometryError::WeightCount {
                expected: weights.len(),
                found: bias.len(),
            });
        }
        let dim = weights.first().ok_or(GeometryError::EmptySiteSet)?.len();
        for row in &weights {
            check_dim(dim, row.len())?;
        }
        if weights.iter().flatten().chain(&bias).any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.weights[0].len(), z.len())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, z) + b)
            .collect())
    }

    /// Lowest-index argmax of the logits.
    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(z)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    pub gamma: f64,
    pub distance_floor: f64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            gamma: -0.8,
            distance_floor: 1e-8,
        }
    }
}

impl InfluenceConfig {
    pub fn new(gamma: f64, distance_floor: f64) -> Result<Self> {
        let cfg = Self {
            gamma,
            distance_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma == 0.0 {
            return Err(GeometryError::InvalidGamma(self.gamma));
        }
        if !self.distance_floor.is_finite() || self.distance_floor <= 0.0 {
            return Err(GeometryError::InvalidFloor(self.distance_floor));
        }
        Ok(())
    }

    /// `-sign(gamma)`, the prefactor of every influence sum.
    pub fn polarity(&self) -> f64 {
        if self.gamma > 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, found })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Lowest index of the minimum.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = k;
        }
    }
    best
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

pub fn vd_distances(z: &[f64], sites: &SiteSet) -> Result<Vec<f64>> {
    check_dim(sites.dim(), z.len())?;
    Ok(sites.iter().map(|s| sq_dist(z, s).sqrt()).collect())
}

pub fn vd_assign(z: &[f64], sites: &SiteSet) -> Result<usize> {
    Ok(argmin(&vd_distances(z, sites)?))
}

pub fn pd_assign(z: &[f64], sites: &PowerSiteSet) -> Result<usize> {
    Ok(argmin(&sites.power_distances(z)?))
}

/// Plain cluster-influence term for one site: `max(d, floor)^gamma`.
#[inline]
pub(crate) fn distance_term(d: f64, cfg: &InfluenceConfig) -> f64 {
    d.max(cfg.distance_floor).powf(cfg.gamma)
}

/// Power-kernel term for one site: `max(d^2 - v^2, floor)^gamma`.
#[inline]
pub(crate) fn power_term(d_sq: f64, weight_sq: f64, cfg: &InfluenceConfig) -> f64 {
    (d_sq - weight_sq).max(cfg.distance_floor).powf(cfg.gamma)
}

fn check_views(k: usize, cluster: &SiteSet, views: &[&[f64]]) -> Result<()> {
    if views.len() != cluster.len() {
        return Err(GeometryError::ViewCount {
            cluster: k,
            expected: cluster.len(),
            found: views.len(),
        });
    }
    for v in views {
        check_dim(cluster.dim(), v.len())?;
    }
    Ok(())
}

/// Cluster influence `-sign(g) sum_a max(d(mu^a, z), floor)^g`.
pub fn civd_influence(z: &[f64], cluster: &SiteSet, cfg: &InfluenceConfig) -> Result<f64> {
    check_dim(cluster.dim(), z.len())?;
    let sum: f64 = cluster
        .iter()
        .map(|s| distance_term(sq_dist(z, s).sqrt(), cfg))
        .sum();
    Ok(cfg.polarity() * sum)
}

/// As [`civd_influence`], with site `a` measured against `views[a]`.
pub fn civd_influence_views(
    views: &[&[f64]],
    cluster: &SiteSet,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check_views(0, cluster, views)?;
    let sum: f64 = cluster
        .iter()
        .zip(views)
        .map(|(s, z)| distance_term(sq_dist(z, s).sqrt(), cfg))
        .sum();
    Ok(cfg.polarity() * sum)
}

/// Power-kernel cluster influence `-sign(g) sum_a max(d^2 - v^2, floor)^g`.
pub fn cipd_influence(
    z: &[f64],
    cluster: &SiteSet,
    weight_sq: f64,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check_dim(cluster.dim(), z.len())?;
    let sum: f64 = cluster
        .iter()
        .map(|s| power_term(sq_dist(z, s), weight_sq, cfg))
        .sum();
    Ok(cfg.polarity() * sum)
}

pub fn cipd_influence_views(
    views: &[&[f64]],
    cluster: &SiteSet,
    weight_sq: f64,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check_views(0, cluster, views)?;
    let sum: f64 = cluster
        .iter()
        .zip(views)
        .map(|(s, z)| power_term(sq_dist(z, s), weight_sq, cfg))
        .sum();
    Ok(cfg.polarity() * sum)
}

/// Cluster influence on squared distances, `-sign(g) sum_a max(d^2, floor)^g`.
/// This is the zero-weight member of the power-kernel family.
pub fn civd_sq_influence(z: &[f64], cluster: &SiteSet, cfg: &InfluenceConfig) -> Result<f64> {
    cipd_influence(z, cluster, 0.0, cfg)
}

/// Which influence family a cluster query evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Influence {
    /// `d^g` summed over the cluster.
    Distance,
    /// `(d^2)^g`: the power kernel with every weight forced to zero.
    SquaredDistance,
    /// `(d^2 - v_k^2)^g` with the cluster weights.
    Power,
}

/// Influence of every cluster on a single point.
pub fn cluster_influences(
    z: &[f64],
    c: &ClusterSiteSet,
    kind: Influence,
    cfg: &InfluenceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let weights = match kind {
        Influence::Power => Some(c.require_weights()?),
        _ => None,
    };
    c.clusters()
        .iter()
        .enumerate()
        .map(|(k, cl)| match kind {
            Influence::Distance => civd_influence(z, cl, cfg),
            Influence::SquaredDistance => cipd_influence(z, cl, 0.0, cfg),
            Influence::Power => cipd_influence(z, cl, weights.unwrap()[k], cfg),
        })
        .collect()
}

/// Influence of every cluster with per-member views.
pub fn cluster_influences_views(
    views: &[&[f64]],
    c: &ClusterSiteSet,
    kind: Influence,
    cfg: &InfluenceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let weights = match kind {
        Influence::Power => Some(c.require_weights()?),
        _ => None,
    };
    c.clusters()
        .iter()
        .enumerate()
        .map(|(k, cl)| {
            check_views(k, cl, views)?;
            match kind {
                Influence::Distance => civd_influence_views(views, cl, cfg),
                Influence::SquaredDistance => cipd_influence_views(views, cl, 0.0, cfg),
                Influence::Power => cipd_influence_views(views, cl, weights.unwrap()[k], cfg),
            }
        })
        .collect()
}

pub fn civd_assign(z: &[f64], c: &ClusterSiteSet, cfg: &InfluenceConfig) -> Result<usize> {
    Ok(argmax(&cluster_influences(z, c, Influence::Distance, cfg)?))
}

pub fn civd_sq_assign(z: &[f64], c: &ClusterSiteSet, cfg: &InfluenceConfig) -> Result<usize> {
    Ok(argmax(&cluster_influences(
        z,
        c,
        Influence::SquaredDistance,
        cfg,
    )?))
}

pub fn cipd_assign(z: &[f64], c: &ClusterSiteSet, cfg: &InfluenceConfig) -> Result<usize> {
    Ok(argmax(&cluster_influences(z, c, Influence::Power, cfg)?))
}

/// Argmax-preserving conversion of a logistic head to its power diagram:
/// `mu_k = W_k / 2`, `v_k^2 = b_k + |W_k|^2 / 4`.
pub fn logistic_to_power(head: &LogisticHead) -> PowerSiteSet {
    let sites: Vec<Vec<f64>> = head
        .weights
        .iter()
        .map(|w| w.iter().map(|x| 0.5 * x).collect())
        .collect();
    let weights_sq = head
        .weights
        .iter()
        .zip(&head.bias)
        .map(|(w, b)| b + 0.25 * dot(w, w))
        .collect();
    // the head was validated on construction
    let base = SiteSet::new(sites).expect("validated head");
    PowerSiteSet::with_squared_weights(base, weights_sq).expect("finite weights")
}

/// Whether `z` falls where the unweighted and weighted cluster diagrams
/// assign different cells. Returns the pair `(unweighted, weighted)` when
/// they differ.
pub fn disagreement_cells(
    z: &[f64],
    c: &ClusterSiteSet,
    cfg: &InfluenceConfig,
) -> Result<Option<(usize, usize)>> {
    let plain = civd_sq_assign(z, c, cfg)?;
    let weighted = cipd_assign(z, c, cfg)?;
    Ok((plain != weighted).then_some((plain, weighted)))
}

pub fn diagram_disagreement(z: &[f64], c: &ClusterSiteSet, cfg: &InfluenceConfig) -> Result<bool> {
    Ok(disagreement_cells(z, c, cfg)?.is_some())
}

/// Assigns many points at once.
pub fn assign_batch<F>(points: &[Vec<f64>], exec: Exec, assign: F) -> Result<Vec<usize>>
where
    F: Fn(&[f64]) -> Result<usize> + Sync + Send,
{
    exec.map(points, |p| assign(p)).into_iter().collect()
}
