use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specband::covest::toeplitz_cov_estimate;
use specband::kernel::PriorHyperParams;
use specband::map::{build_design, map_refine, MapProblem};
use specband::signal::{generate_panel, AmplitudeLaw, PanelConfig, SnapshotPanel};
use specband::stats::BoxStats;
use specband::subspace::{
    cluster_phases, discrete_spectrum, estimate_centers, phase_angles, solve_orthogonal_procrustes,
    ClusterMethod, SubspaceOptions,
};

fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

fn two_band_panel(seed: u64, n: usize, l: usize) -> SnapshotPanel {
    generate_panel(&PanelConfig {
        prior: PriorHyperParams::new(vec![0.7, 2.0], 0.08, 0.64, 0.03).unwrap(),
        n,
        l,
        amp_law: AmplitudeLaw::Uniform,
        seed,
    })
    .unwrap()
}

/// Best split of sorted points into `k` contiguous groups by total squared
/// deviation, by exhaustive search.
fn brute_force_centers(sorted: &[f64], k: usize) -> Vec<f64> {
    fn sse(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum()
    }
    fn go(x: &[f64], k: usize) -> (f64, Vec<usize>) {
        if k == 1 {
            return (sse(x), vec![]);
        }
        let mut best = (f64::INFINITY, vec![]);
        for cut in 1..=x.len() - (k - 1) {
            let (rest, mut cuts) = go(&x[cut..], k - 1);
            let total = sse(&x[..cut]) + rest;
            if total < best.0 {
                cuts.iter_mut().for_each(|c| *c += cut);
                cuts.insert(0, cut);
                best = (total, cuts);
            }
        }
        best
    }
    let (_, cuts) = go(sorted, k);
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(sorted.len());
    bounds
        .windows(2)
        .map(|b| sorted[b[0]..b[1]].iter().sum::<f64>() / (b[1] - b[0]) as f64)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn procrustes_solution_is_orthogonal(seed in any::<u64>(), rows in 6usize..80, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_orthonormal(&mut rng, rows, cols.min(rows - 1));
        let r = solve_orthogonal_procrustes(&h, None).unwrap();
        let n = r.a.nrows();
        prop_assert!((r.a.transpose() * &r.a - DMatrix::<f64>::identity(n, n)).amax() < 1e-8);
    }

    #[test]
    fn phases_invariant_under_state_basis_change(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let panel = two_band_panel(seed, 60, 30);
        let cov = toeplitz_cov_estimate(&panel).unwrap();
        let h = cov.eigen().vectors.columns(0, 10).into_owned();
        let q = random_orthonormal(&mut rng, 10, 10);
        let p1 = phase_angles(&solve_orthogonal_procrustes(&h, None).unwrap()).unwrap();
        let p2 = phase_angles(&solve_orthogonal_procrustes(&(&h * q), None).unwrap()).unwrap();
        prop_assert_eq!(p1.positive.len(), p2.positive.len());
        for (a, b) in p1.positive.iter().zip(&p2.positive) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn estimate_invariant_under_amplitude_scaling(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let panel = two_band_panel(seed, 60, 40);
        let scaled = SnapshotPanel { data: &panel.data * alpha, truth: None };
        let opts = SubspaceOptions::default();
        let (a, _) = estimate_centers(&panel, 2, &opts).unwrap();
        let (b, _) = estimate_centers(&scaled, 2, &opts).unwrap();
        prop_assert_eq!(a.rank_hat, b.rank_hat);
        for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn spectrum_weights_sum_to_output_variance(seed in any::<u64>(), cols in 1usize..9, p in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_orthonormal(&mut rng, 40, cols);
        let r = solve_orthogonal_procrustes(&h, None).unwrap();
        let lines = discrete_spectrum(&r, p).unwrap();
        prop_assert_eq!(lines.len(), cols);
        let total: f64 = lines.iter().map(|l| l.weight).sum();
        prop_assert!(lines.iter().all(|l| l.weight >= 0.0));
        prop_assert!((total - p * r.c.norm_squared()).abs() < 1e-8);
    }

    #[test]
    fn gap_clustering_matches_exhaustive_search(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phases = Vec::new();
        for j in 0..k {
            let center = (j as f64 + 0.5) * PI / k as f64;
            for _ in 0..rng.random_range(1..6) {
                phases.push(center + rng.random_range(-0.1..0.1));
            }
        }
        let c = cluster_phases(&phases, k, ClusterMethod::LargestGap).unwrap();
        let brute = brute_force_centers(&c.phases, k);
        for (a, b) in c.centers.iter().zip(&brute) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lloyd = cluster_phases(&phases, k, ClusterMethod::Lloyd).unwrap();
        prop_assert!(lloyd.assignment.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(lloyd.counts.iter().sum::<usize>(), phases.len());
    }

    #[test]
    fn map_estimates_stay_in_box(seed in any::<u64>(), w in 0.005f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(30..150);
        let theta0 = vec![rng.random_range(0.4..1.2), rng.random_range(1.9..2.7)];
        let truth: Vec<f64> = theta0.iter().map(|t| t + rng.random_range(-0.3..0.3)).collect();
        let u = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let noise = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-0.5..0.5));
        let y = &build_design(&truth, n).unwrap().v * u + noise;
        let res = map_refine(&MapProblem::new(y, theta0.clone(), w)).unwrap();
        for (o, t) in res.omega_map.iter().zip(&theta0) {
            prop_assert!(*o >= t - w && *o <= t + w);
        }
        prop_assert!(res.objective_trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn box_stats_are_ordered(values in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
        let b = BoxStats::from_values(&values).unwrap();
        prop_assert!(b.q1 <= b.median && b.median <= b.q3);
        prop_assert!(b.whisker_low <= b.whisker_high);
        prop_assert_eq!(b.count, values.len());
        let inside = values.iter().filter(|v| **v >= b.whisker_low && **v <= b.whisker_high).count();
        prop_assert_eq!(inside + b.outliers.len(), values.len());
    }

    #[test]
    fn toeplitz_estimate_lag_zero_is_mean_power(seed in any::<u64>()) {
        let panel = two_band_panel(seed, 30, 8);
        let cov = toeplitz_cov_estimate(&panel).unwrap();
        let power = panel.data.iter().map(|v| v * v).sum::<f64>() / panel.data.len() as f64;
        prop_assert!((cov.first_column[0] - power).abs() < 1e-12 * power.max(1.0));
    }
}
