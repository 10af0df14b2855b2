mod support;

use proptest::prelude::*;
use support::{matvec, rng, rotate, sq_dist};
use ttvd_core::adaptation::{run_stream, FeatureExtractor};
use ttvd_core::geometry::{pd_assign, ClusterSiteSet, InfluenceConfig, PowerSiteSet};
use ttvd_core::metrics::*;
use ttvd_core::stream_sim::*;
use ttvd_core::{AdaptConfig, AugmentationFamily, Mode};

fn small_config(seed: u64) -> StreamConfig {
    StreamConfig {
        n_classes: 4,
        input_dim: 8,
        feature_dim: 4,
        n_train_per_class: 2000,
        batch_size: 32,
        n_batches: 20,
        seed,
        ..StreamConfig::default()
    }
}

fn class_mean_inputs(inputs: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; dim];
    let mut n = 0;
    for (x, y) in inputs.iter().zip(labels) {
        if *y == k {
            for j in 0..dim {
                sum[j] += x[j];
            }
            n += 1;
        }
    }
    (sum.iter().map(|s| s / n as f64).collect(), n)
}

#[test]
fn source_class_means_follow_the_world() {
    let world = World::new(&small_config(3)).unwrap();
    let src = world.source();
    assert_eq!(src.len(), 4 * 2000);
    for k in 0..4 {
        let (mean, n) = class_mean_inputs(&src.inputs, &src.labels, k, 8);
        assert_eq!(n, 2000);
        let tol = 5.0 * world.spreads[k] / (n as f64).sqrt();
        for j in 0..8 {
            assert!((mean[j] - world.means[k][j]).abs() < tol, "class {k} coord {j}");
        }
    }
}

#[test]
fn uncorrupted_stream_matches_source_distribution() {
    let cfg = StreamConfig {
        corruption: Corruption::none(),
        batch_size: 500,
        n_batches: 8,
        ..small_config(4)
    };
    let world = World::new(&cfg).unwrap();
    let batches = world.stream();
    let inputs: Vec<Vec<f64>> = batches.iter().flat_map(|b| b.inputs().to_vec()).collect();
    let labels: Vec<usize> = batches.iter().flat_map(|b| hidden_labels(b).to_vec()).collect();
    for k in 0..4 {
        let (mean, n) = class_mean_inputs(&inputs, &labels, k, 8);
        let tol = 5.0 * world.spreads[k] / (n as f64).sqrt();
        for j in 0..8 {
            assert!((mean[j] - world.means[k][j]).abs() < tol);
        }
    }
}

#[test]
fn scale_drift_shrinks_inputs() {
    let cfg = StreamConfig {
        batch_size: 500,
        n_batches: 8,
        ..small_config(5)
    };
    let world = World::new(&cfg).unwrap();
    let batches = world.stream();
    let inputs: Vec<Vec<f64>> = batches.iter().flat_map(|b| b.inputs().to_vec()).collect();
    let labels: Vec<usize> = batches.iter().flat_map(|b| hidden_labels(b).to_vec()).collect();
    let factor = 1.0 - 0.03 * 3.0;
    for k in 0..4 {
        let (mean, n) = class_mean_inputs(&inputs, &labels, k, 8);
        let tol = 5.0 * factor * world.spreads[k] / (n as f64).sqrt();
        for j in 0..8 {
            assert!((mean[j] - factor * world.means[k][j]).abs() < tol);
        }
    }
}

#[test]
fn severity_outside_range_is_rejected() {
    for severity in [0, 6] {
        let cfg = StreamConfig {
            corruption: Corruption { kind: CorruptionKind::GaussianNoise, severity },
            ..small_config(0)
        };
        assert!(matches!(World::new(&cfg), Err(SimError::InvalidConfig(_))));
    }
}

#[test]
fn dirichlet_concentration_extremes() {
    let mut r = rng(20);
    for _ in 0..50 {
        let p = dirichlet(1e6, 10, &mut r);
        assert!(p.iter().all(|x| (x - 0.1).abs() < 0.01), "{p:?}");
    }
    let mut max_share = 0.0;
    for _ in 0..2000 {
        let p = dirichlet(0.01, 10, &mut r);
        approx::assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        max_share += p.iter().copied().fold(0.0, f64::max);
    }
    assert!(max_share / 2000.0 > 0.8);
}

#[test]
fn label_shift_concentrates_batches() {
    let cfg = StreamConfig {
        label_shift_alpha: Some(0.01),
        batch_size: 64,
        n_batches: 40,
        ..small_config(6)
    };
    let batches = gen_stream(&cfg).unwrap();
    let mut dominant = 0.0;
    for b in &batches {
        let mut counts = [0usize; 4];
        hidden_labels(b).iter().for_each(|y| counts[*y] += 1);
        dominant += *counts.iter().max().unwrap() as f64 / b.len() as f64;
    }
    assert!(dominant / 40.0 > 0.8);
}

#[test]
fn expanded_sites_are_rotated_class_means() {
    let world = World::new(&small_config(7)).unwrap();
    let src = world.source().subsample_per_class(0.1);
    let fe = world.extractor();
    let c = expand_cluster_sites(&src, &fe, &AugmentationFamily::default()).unwrap();
    for k in 0..4 {
        for a in 0..4 {
            let mut sum = vec![0.0; 4];
            let mut n = 0.0;
            for (x, y) in src.inputs.iter().zip(&src.labels) {
                if *y == k {
                    let z = matvec(&world.frozen_map, &rotate(a as u8, x));
                    sum.iter_mut().zip(&z).for_each(|(s, v)| *s += v);
                    n += 1.0;
                }
            }
            for j in 0..4 {
                approx::assert_relative_eq!(c.cluster(k).site(a)[j], sum[j] / n, max_relative = 1e-10);
            }
        }
    }
    let plain = estimate_sites(&src, &fe).unwrap();
    assert_eq!(plain, c.member(0));
}

#[test]
fn symmetric_classes_get_equal_weights() {
    let mut r = rng(21);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..400 {
        let e = support::uniform_vec(&mut r, 2, -0.8, 0.8);
        inputs.push(vec![-1.0 + e[0], e[1]]);
        labels.push(0);
        inputs.push(vec![1.0 - e[0], -e[1]]);
        labels.push(1);
    }
    let train = LabeledSet { inputs, labels, n_classes: 2 };
    let fe = FeatureExtractor::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let sites = estimate_sites(&train, &fe).unwrap();
    let fit = fit_power_weights(&train, &fe, &sites).unwrap();
    approx::assert_abs_diff_eq!(fit.weights_sq[0], 0.0, epsilon = 1e-8);
    approx::assert_abs_diff_eq!(fit.weights_sq[1], 0.0, epsilon = 1e-8);
    assert!(fit.beta > 0.0);
}

#[test]
fn fitted_head_and_weighted_diagram_agree() {
    let world = World::new(&StreamConfig { n_train_per_class: 500, ..small_config(8) }).unwrap();
    let src = world.source();
    let fe = world.extractor();
    let sites = estimate_sites(&src, &fe).unwrap();
    let fit = fit_power_weights(&src, &fe, &sites).unwrap();
    assert!(fit.weights_sq.iter().any(|w| *w != 0.0));
    let power = PowerSiteSet::with_squared_weights(sites.clone(), fit.weights_sq.clone()).unwrap();
    let mut r = rng(22);
    let spread: f64 = sites.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max) * 2.0;
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let z = support::uniform_vec(&mut r, 4, -spread, spread);
        let power_dist: Vec<f64> = sites
            .iter()
            .zip(&fit.weights_sq)
            .map(|(s, w)| sq_dist(&z, s) - w)
            .collect();
        let mut sorted = power_dist.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted[1] - sorted[0] < 1e-9 {
            continue;
        }
        let pd = pd_assign(&z, &power).unwrap();
        assert_eq!(pd, support::first_min(&power_dist));
        mismatches += usize::from(fit.head.predict(&z).unwrap() != pd);
    }
    assert_eq!(mismatches, 0);
}

fn ece_oracle(conf: &[f64], correct: &[bool], n_bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        let (lo, hi) = (b as f64 / n_bins as f64, (b + 1) as f64 / n_bins as f64);
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] == 0.0)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
        let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        total += m / n * (acc - avg).abs();
    }
    total
}

#[test]
fn ece_examples() {
    let cfg = CalibrationConfig::default();
    assert_eq!(ece(&[1.0, 1.0], &[true, true], cfg).unwrap(), 0.0);
    approx::assert_abs_diff_eq!(ece(&[0.9, 0.9], &[false, false], cfg).unwrap(), 0.9, epsilon = 1e-15);
    // edge values fall in the lower bin
    approx::assert_abs_diff_eq!(
        ece(&[0.3, 0.7], &[true, false], cfg).unwrap(),
        ece_oracle(&[0.3, 0.7], &[true, false], 10),
        epsilon = 1e-15
    );
    assert!(ece(&[], &[], cfg).is_err());
    assert!(ece(&[1.5], &[true], cfg).is_err());
    assert_eq!(error_rate(&[0, 1, 2, 2], &[0, 1, 1, 0]).unwrap(), 0.5);
}

#[test]
fn curve_ends_at_overall_error() {
    let cfg = small_config(9);
    let world = World::new(&cfg).unwrap();
    let src = world.source().subsample_per_class(0.05);
    let fe = world.extractor();
    let sites = ClusterSiteSet::singletons(&estimate_sites(&src, &fe).unwrap());
    let batches = world.stream();
    let acfg = AdaptConfig { mode: Mode::Vd, filtering: false, ..AdaptConfig::default() };
    let trace = run_stream(&mut fe.clone(), &batches, &sites, &AugmentationFamily::identity(), &acfg).unwrap();
    let scored = score_trace(&trace, &batches).unwrap();
    let curve = adaptation_curve(&trace, &batches).unwrap();
    let all_pred: Vec<usize> = trace.records.iter().flat_map(|r| r.predictions.clone()).collect();
    let all_y: Vec<usize> = batches.iter().flat_map(|b| hidden_labels(b).to_vec()).collect();
    let overall = error_rate(&all_pred, &all_y).unwrap();
    approx::assert_abs_diff_eq!(curve.last().unwrap().1, overall, epsilon = 1e-15);
    assert_eq!(scored.error, Some(overall));
    assert_eq!(curve.len(), 20);
    let csv = trace_csv([(9, scored.rows.as_slice())], true);
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("seed,batch_index,mode,batch_error,cum_error,mean_loss,kept_fraction\n"));
}

#[test]
fn distance_report_flags_aggregation_rescue() {
    // view 0 is nearer to class 1, the other views sit on class 0's sites
    let fe = FeatureExtractor::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let x = [1.0, 0.0];
    let near = |p: [f64; 2]| vec![p[0] + 0.01, p[1]];
    let c = ClusterSiteSet::new(vec![
        vec![vec![1.5, 0.0], near([0.0, 1.0]), near([-1.0, 0.0]), near([0.0, -1.0])],
        vec![vec![1.1, 0.0], vec![3.0, 3.0], vec![3.0, 3.0], vec![3.0, 3.0]],
    ])
    .unwrap();
    let rep = sample_distance_report(&x, &fe, &c, &AugmentationFamily::default(), &InfluenceConfig::default()).unwrap();
    assert_eq!(rep.view_predictions[0], 1);
    assert_eq!(rep.civd_prediction, 0);
    assert!(rep.aggregation_rescue(0));
    assert!(!rep.aggregation_rescue(1));
    approx::assert_abs_diff_eq!(rep.distances[0][0], 0.5, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(rep.distances[2][0], 0.01, epsilon = 1e-12);
    let expected: f64 = 0.5f64.powf(-0.8) + 3.0 * 0.01f64.powf(-0.8);
    approx::assert_relative_eq!(rep.influences[0], expected, max_relative = 1e-10);
    assert_eq!(rep.to_csv().lines().count(), 1 + 4 * 2);
}

#[test]
fn columnar_files_roundtrip() {
    let cfg = small_config(10);
    let world = World::new(&cfg).unwrap();
    let src = world.source().subsample_per_class(0.01);
    let (back, seed) = read_labeled(&write_labeled(&src, 10)).unwrap();
    assert_eq!((back, seed), (src, 10));
    let batches = world.stream();
    let (back, k, seed) = read_stream(&write_stream(&batches, 4, 10)).unwrap();
    assert_eq!((back, k, seed), (batches, 4, 10));
}

proptest! {
    #[test]
    fn ece_matches_oracle(
        data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        n_bins in 1usize..20,
    ) {
        let (conf, ok): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let got = ece(&conf, &ok, CalibrationConfig { n_bins }).unwrap();
        prop_assert!((got - ece_oracle(&conf, &ok, n_bins)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn ece_ignores_sample_order(
        data in prop::collection::vec((prop::sample::select(vec![0.1, 0.2, 0.35, 0.5, 0.8, 1.0]), any::<bool>()), 2..60),
        rot in 0usize..60,
    ) {
        let (conf, ok): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let r = rot % conf.len();
        let mut c2 = conf.clone();
        let mut o2 = ok.clone();
        c2.rotate_left(r);
        o2.rotate_left(r);
        c2.reverse();
        o2.reverse();
        let cfg = CalibrationConfig::default();
        prop_assert!((ece(&conf, &ok, cfg).unwrap() - ece(&c2, &o2, cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_draws_are_distributions(alpha in 1e-3f64..1e3, k in 1usize..12, seed in any::<u64>()) {
        let p = dirichlet(alpha, k, &mut rng(seed));
        prop_assert_eq!(p.len(), k);
        prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn site_oracle_is_unaffected_by_affine_defaults() {
    let world = World::new(&small_config(11)).unwrap();
    let fe = world.extractor();
    assert_eq!(fe.scale(), &[1.0; 4]);
    assert_eq!(fe.shift(), &[0.0; 4]);
    let x = world.source().inputs[0].clone();
    assert_eq!(fe.forward(&x).unwrap().into_inner(), matvec(&world.frozen_map, &x));
}
