//! End-to-end runs: source model, stream, adaptation and scoring for one seed.

use thiserror::Error;

use crate::adaptation::{run_stream, AdaptConfig, AdaptError, FeatureExtractor, Mode, RunTrace};
use crate::augment::AugmentationFamily;
use crate::geometry::{ClusterSiteSet, GeometryError};
use crate::metrics::{score_trace, MetricsError, ScoredTrace};
use crate::stream_sim::{
    expand_cluster_sites, fit_power_weights, Batch, LabeledSet, PowerFit, SimError,
    StreamConfig, World,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("site fraction must be in (0, 1], got {0}")]
    SiteFraction(f64),
}

impl ExperimentError {
    /// A numerical breakdown rather than a bad configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ExperimentError::Adapt(
                AdaptError::NonFiniteLoss { .. }
                    | AdaptError::NonFiniteGradient
                    | AdaptError::Geometry(GeometryError::NonFinite)
            ) | ExperimentError::Sim(SimError::FitDiverged)
        )
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Everything fitted on clean source data for one seed.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub world: World,
    pub family: AugmentationFamily,
    pub extractor: FeatureExtractor,
    /// Rotation-expanded class sites carrying the fitted power weights.
    pub sites: ClusterSiteSet,
    pub fit: PowerFit,
    pub site_fraction: f64,
}

impl SourceModel {
    pub fn build(cfg: &StreamConfig, site_fraction: f64) -> Result<Self> {
        let world = World::new(cfg)?;
        let source = world.source();
        Self::from_source(world, &source, site_fraction)
    }

    /// Sites come from the first `site_fraction` of each class; the
    /// normalisation statistics and power weights use the whole source set.
    pub fn from_source(world: World, source: &LabeledSet, site_fraction: f64) -> Result<Self> {
        if !(site_fraction > 0.0 && site_fraction <= 1.0) {
            return Err(ExperimentError::SiteFraction(site_fraction));
        }
        let family = AugmentationFamily::default();
        let plain = world.extractor();
        let subset = source.subsample_per_class(site_fraction);
        let clusters = expand_cluster_sites(&subset, &plain, &family)?;
        let fit = fit_power_weights(source, &plain, &clusters.member(0))?;
        let sites = clusters
            .with_squared_weights(fit.weights_sq.clone())
            .map_err(SimError::from)?;
        let extractor = world.normalized_extractor(source, &family)?;
        Ok(Self {
            world,
            family,
            extractor,
            sites,
            fit,
            site_fraction,
        })
    }

    /// Test stream for `cfg`; only the stream settings of `cfg` matter.
    pub fn stream(&self, cfg: &StreamConfig) -> Result<Vec<Batch>> {
        let mut stream_cfg = self.world.config.clone();
        stream_cfg.corruption = cfg.corruption;
        stream_cfg.batch_size = cfg.batch_size;
        stream_cfg.n_batches = cfg.n_batches;
        stream_cfg.label_shift_alpha = cfg.label_shift_alpha;
        Ok(World {
            config: stream_cfg,
            ..self.world.clone()
        }
        .stream())
    }

    /// Sites with every power weight set to zero.
    pub fn unweighted_sites(&self) -> ClusterSiteSet {
        let k = self.sites.len();
        self.sites
            .clone()
            .with_squared_weights(vec![0.0; k])
            .expect("k zero weights")
    }

    pub fn run(&self, batches: &[Batch], cfg: &AdaptConfig) -> Result<RunOutcome> {
        self.run_with_sites(batches, &self.sites, cfg)
    }

    pub fn run_with_sites(
        &self,
        batches: &[Batch],
        sites: &ClusterSiteSet,
        cfg: &AdaptConfig,
    ) -> Result<RunOutcome> {
        let mut fe = self.extractor.clone();
        let trace = run_stream(&mut fe, batches, sites, &self.family, cfg)?;
        let scored = score_trace(&trace, batches)?;
        Ok(RunOutcome { trace, scored })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub scored: ScoredTrace,
}

impl RunOutcome {
    pub fn error(&self) -> f64 {
        self.scored.error.unwrap_or(0.0)
    }
}

/// The filter setting a mode runs with: the weighted diagram filters, the
/// others do not.
pub fn adapt_config_for(base: &AdaptConfig, mode: Mode, filter: Option<bool>) -> AdaptConfig {
    AdaptConfig {
        mode,
        filtering: filter.unwrap_or(mode == Mode::Cipd),
        ..*base
    }
}
