//! Noisy-sample filtering by diagram subtraction.
//!
//! A sample is excluded when the unweighted and the weighted diagram put it
//! in different cells. For cluster sites the pair is influence on squared
//! distances against influence on power distances, so all-zero weights make
//! the two diagrams identical and nothing is excluded. For plain sites the
//! pair is the Voronoi diagram against the power diagram.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    argmax, cluster_influences, cluster_influences_views, pd_assign, vd_assign, ClusterSiteSet,
    Influence, InfluenceConfig, PowerSiteSet, Result,
};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub keep_mask: Vec<bool>,
    pub kept_fraction: f64,
    /// `(sample, unweighted cell, weighted cell)` for every excluded sample.
    pub disagreement_pairs: Vec<(usize, usize, usize)>,
}

impl FilterReport {
    fn from_cells(cells: Vec<(usize, usize)>) -> Self {
        let keep_mask: Vec<bool> = cells.iter().map(|(a, b)| a == b).collect();
        let kept = keep_mask.iter().filter(|k| **k).count();
        let kept_fraction = if cells.is_empty() {
            1.0
        } else {
            kept as f64 / cells.len() as f64
        };
        let disagreement_pairs = cells
            .into_iter()
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| (i, a, b))
            .collect();
        Self {
            keep_mask,
            kept_fraction,
            disagreement_pairs,
        }
    }
}

/// Filters single feature points against cluster sites.
pub fn filter_batch(
    features: &[Vec<f64>],
    c: &ClusterSiteSet,
    cfg: &InfluenceConfig,
    exec: Exec,
) -> Result<FilterReport> {
    let cells = exec
        .map(features, |z| {
            let plain = argmax(&cluster_influences(z, c, Influence::SquaredDistance, cfg)?);
            let weighted = argmax(&cluster_influences(z, c, Influence::Power, cfg)?);
            Ok((plain, weighted))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterReport::from_cells(cells))
}

/// Filters samples given one feature per cluster member, `[sample][view]`.
pub fn filter_batch_views(
    views: &[Vec<Vec<f64>>],
    c: &ClusterSiteSet,
    cfg: &InfluenceConfig,
    exec: Exec,
) -> Result<FilterReport> {
    let cells = exec
        .map(views, |v| {
            let v: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
            let plain = argmax(&cluster_influences_views(&v, c, Influence::SquaredDistance, cfg)?);
            let weighted = argmax(&cluster_influences_views(&v, c, Influence::Power, cfg)?);
            Ok((plain, weighted))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterReport::from_cells(cells))
}

/// Voronoi against power diagram on plain sites.
pub fn filter_batch_power(
    features: &[Vec<f64>],
    p: &PowerSiteSet,
    exec: Exec,
) -> Result<FilterReport> {
    let cells = exec
        .map(features, |z| Ok((vd_assign(z, &p.base)?, pd_assign(z, p)?)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterReport::from_cells(cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SiteSet;

    fn two() -> SiteSet {
        SiteSet::new(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_weights_keep_everything() {
        let c = ClusterSiteSet::singletons(&two()).with_weights(&[0.0, 0.0]).unwrap();
        let pts = vec![vec![0.95, 0.0], vec![1.0, 0.0], vec![-3.0, 2.0]];
        let r = filter_batch(&pts, &c, &InfluenceConfig::default(), Exec::Sequential).unwrap();
        assert_eq!(r.keep_mask, vec![true; 3]);
        assert_eq!(r.kept_fraction, 1.0);
        assert!(r.disagreement_pairs.is_empty());
    }

    #[test]
    fn band_sample_is_excluded() {
        let c = ClusterSiteSet::singletons(&two()).with_weights(&[0.0, 0.5]).unwrap();
        let pts = vec![vec![0.95, 0.0], vec![0.2, 0.0]];
        let r = filter_batch(&pts, &c, &InfluenceConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(r.keep_mask, vec![false, true]);
        assert_eq!(r.kept_fraction, 0.5);
        assert_eq!(r.disagreement_pairs, vec![(0, 0, 1)]);
        let again = filter_batch(&pts, &c, &InfluenceConfig::default(), Exec::Parallel).unwrap();
        assert_eq!(r, again);

        let p = PowerSiteSet::with_weights(two(), &[0.0, 0.5]).unwrap();
        let r = filter_batch_power(&pts, &p, Exec::Sequential).unwrap();
        assert_eq!(r.keep_mask, vec![false, true]);
    }

    #[test]
    fn missing_weights_propagate() {
        let c = ClusterSiteSet::singletons(&two());
        assert!(filter_batch(&[vec![0.0, 0.0]], &c, &InfluenceConfig::default(), Exec::Sequential).is_err());
    }
}
