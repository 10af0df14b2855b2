//! Brute-force reference evaluations shared by integration tests.
//!
//! Everything here is written from the formulas directly, without calling
//! into the library's scoring code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttvd_core::adaptation::{batch_loss_and_grad, filter_features, FeatureExtractor};
use ttvd_core::{AdaptConfig, AugmentationFamily, ClusterSiteSet, Mode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

pub fn first_min(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

pub fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Quarter turns applied to each coordinate pair.
pub fn rotate(turns: u8, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in (0..x.len()).step_by(2) {
        let (mut u, mut v) = (x[i], x[i + 1]);
        for _ in 0..turns % 4 {
            (u, v) = (-v, u);
        }
        out[i] = u;
        out[i + 1] = v;
    }
    out
}

pub fn matvec(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += r[j] * x[j];
            }
            s
        })
        .collect()
}

/// A plain-data description of one adaptation problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub frozen: Vec<Vec<f64>>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    /// `[class][view][coord]`
    pub sites: Vec<Vec<Vec<f64>>>,
    pub weights_sq: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub gamma: f64,
    pub floor: f64,
    pub tau: f64,
}

impl Problem {
    /// Random problem whose clamps stay inactive for every sample.
    pub fn random(rng: &mut ChaCha8Rng, in_dim: usize, dim: usize, k: usize, n: usize) -> Self {
        let frozen: Vec<Vec<f64>> = (0..dim).map(|_| uniform_vec(rng, in_dim, -1.0, 1.0)).collect();
        let scale = uniform_vec(rng, dim, 0.7, 1.3);
        let shift = uniform_vec(rng, dim, -0.3, 0.3);
        let sites: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| (0..4).map(|_| uniform_vec(rng, dim, -1.5, 1.5)).collect())
            .collect();
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(rng, in_dim, -1.5, 1.5)).collect();
        let mut p = Self {
            frozen,
            scale,
            shift,
            sites,
            weights_sq: vec![0.0; k],
            inputs,
            gamma: -0.8,
            floor: 1e-8,
            tau: rng.random_range(0.5..2.0),
        };
        let min_sq = p.min_sq_distance();
        p.weights_sq = uniform_vec(rng, k, 0.0, 0.5 * min_sq);
        p
    }

    pub fn features(&self, x: &[f64], view: usize) -> Vec<f64> {
        let h = matvec(&self.frozen, &rotate(view as u8, x));
        (0..h.len()).map(|j| self.scale[j] * h[j] + self.shift[j]).collect()
    }

    fn min_sq_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for x in &self.inputs {
            for (a, _) in self.sites[0].iter().enumerate() {
                let z = self.features(x, a);
                for cl in &self.sites {
                    m = m.min(sq_dist(&z, &cl[a]));
                }
            }
        }
        m
    }

    pub fn scores(&self, x: &[f64], mode: Mode) -> Vec<f64> {
        let polarity = if self.gamma > 0.0 { -1.0 } else { 1.0 };
        self.sites
            .iter()
            .enumerate()
            .map(|(k, cl)| match mode {
                Mode::Vd => -sq_dist(&self.features(x, 0), &cl[0]).sqrt(),
                Mode::Civd => {
                    let mut f = 0.0;
                    for (a, s) in cl.iter().enumerate() {
                        f += sq_dist(&self.features(x, a), s).sqrt().max(self.floor).powf(self.gamma);
                    }
                    polarity * f
                }
                Mode::Cipd | Mode::CivdSquared => {
                    let w = if mode == Mode::Cipd { self.weights_sq[k] } else { 0.0 };
                    let mut f = 0.0;
                    for (a, s) in cl.iter().enumerate() {
                        f += (sq_dist(&self.features(x, a), s) - w).max(self.floor).powf(self.gamma);
                    }
                    polarity * f
                }
            })
            .collect()
    }

    pub fn entropy(&self, x: &[f64], mode: Mode) -> f64 {
        entropy_of_scores(&self.scores(x, mode), self.tau)
    }

    pub fn mean_loss(&self, mode: Mode, keep: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for (x, k) in self.inputs.iter().zip(keep) {
            if *k {
                total += self.entropy(x, mode);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    pub fn extractor(&self) -> FeatureExtractor {
        let mut fe = FeatureExtractor::new(self.frozen.clone()).unwrap();
        fe.set_affine(self.scale.clone(), self.shift.clone()).unwrap();
        fe
    }

    pub fn cluster_sites(&self) -> ClusterSiteSet {
        ClusterSiteSet::new(self.sites.clone())
            .unwrap()
            .with_squared_weights(self.weights_sq.clone())
            .unwrap()
    }

    pub fn adapt_config(&self, mode: Mode, filtering: bool) -> AdaptConfig {
        let mut cfg = AdaptConfig {
            mode,
            filtering,
            tau: self.tau,
            ..AdaptConfig::default()
        };
        cfg.influence.gamma = self.gamma;
        cfg.influence.distance_floor = self.floor;
        cfg
    }

    /// Keep mask the library would use at the current parameters.
    pub fn keep_mask(&self, mode: Mode, filtering: bool) -> Vec<bool> {
        if !filtering {
            return vec![true; self.inputs.len()];
        }
        let fe = self.extractor();
        let n_views = if mode == Mode::Vd { 1 } else { 4 };
        let zs: Vec<Vec<Vec<f64>>> = self
            .inputs
            .iter()
            .map(|x| (0..n_views).map(|a| fe.affine(&fe.project(&rotate(a as u8, x)).unwrap())).collect())
            .collect();
        filter_features(&zs, &self.cluster_sites(), &self.adapt_config(mode, true))
            .unwrap()
            .keep_mask
    }

    /// Central differences of [`Problem::mean_loss`] in every scale and shift
    /// coordinate, with `keep` held fixed.
    pub fn numeric_grad(&self, mode: Mode, keep: &[bool], h: f64) -> (Vec<f64>, Vec<f64>) {
        let dim = self.scale.len();
        let mut gs = vec![0.0; dim];
        let mut gt = vec![0.0; dim];
        for j in 0..dim {
            let mut p = self.clone();
            p.scale[j] += h;
            let up = p.mean_loss(mode, keep);
            p.scale[j] -= 2.0 * h;
            gs[j] = (up - p.mean_loss(mode, keep)) / (2.0 * h);
            let mut p = self.clone();
            p.shift[j] += h;
            let up = p.mean_loss(mode, keep);
            p.shift[j] -= 2.0 * h;
            gt[j] = (up - p.mean_loss(mode, keep)) / (2.0 * h);
        }
        (gs, gt)
    }

    /// Relative error of the analytic gradient against central differences,
    /// and the analytic loss.
    pub fn gradient_error(&self, mode: Mode, filtering: bool) -> (f64, f64) {
        let keep = self.keep_mask(mode, filtering);
        let cfg = self.adapt_config(mode, filtering);
        let lg = batch_loss_and_grad(
            &self.extractor(),
            &self.inputs,
            &self.cluster_sites(),
            &AugmentationFamily::default(),
            &cfg,
            &keep,
        )
        .unwrap();
        let (ns, nt) = self.numeric_grad(mode, &keep, 1e-5);
        let analytic: Vec<f64> = lg.grad_scale.iter().chain(&lg.grad_shift).copied().collect();
        let numeric: Vec<f64> = ns.iter().chain(&nt).copied().collect();
        (relative_error(&analytic, &numeric), lg.loss)
    }
}

pub fn entropy_of_scores(scores: &[f64], tau: f64) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut h = 0.0;
    for v in e {
        let p = v / z;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
