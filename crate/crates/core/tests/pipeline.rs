use std::f64::consts::PI;
use std::fs;

use specband::covest::CovOptions;
use specband::harness::{run_campaign, run_trial, McConfig, TrialRecord};
use specband::kernel::PriorHyperParams;
use specband::signal::{generate_panel, snr_to_noise_variance, AmplitudeLaw, PanelConfig};
use specband::stats::BoxStats;
use specband::subspace::{estimate_centers, SubspaceOptions};
use specband::Flag;

fn uniform_panel(theta: Vec<f64>, w: f64, n: usize, l: usize, snr_db: f64, seed: u64) -> PanelConfig {
    let sigma2 = 1.3813f64.powi(2) / 3.0;
    PanelConfig {
        prior: PriorHyperParams::new(theta, w, sigma2, snr_to_noise_variance(snr_db, sigma2).unwrap())
            .unwrap(),
        n,
        l,
        amp_law: AmplitudeLaw::Uniform,
        seed,
    }
}

#[test]
fn quoted_two_frequency_trial() {
    let theta = vec![2.0 * PI * 0.1499, 2.0 * PI * 0.2524];
    let w = 2.0 * PI * 0.0155;
    let panel = generate_panel(&uniform_panel(theta.clone(), w, 100, 100, 15.0, 21)).unwrap();
    let (est, cov) = estimate_centers(&panel, 2, &SubspaceOptions::default()).unwrap();
    let err = specband::harness::relative_center_error(&est.theta_hat, &theta).unwrap();
    assert!(err < 0.02, "relative error {err}");
    // the ratio rule overshoots the asymptotic rank of about 12
    assert!(cov.rank_hat >= 10);
    let eps = 2.0 * PI / 100.0;
    let inside = est
        .phases
        .iter()
        .filter(|&&p| theta.iter().any(|&t| (p - t).abs() <= w + eps))
        .count();
    assert!(inside * 10 >= est.phases.len() * 8, "{inside} of {}", est.phases.len());
}

#[test]
fn degenerate_prior_recovers_fixed_frequency() {
    let omega = 1.1;
    let cfg = PanelConfig {
        prior: PriorHyperParams::new(vec![omega], 0.0, 1.0, 0.0).unwrap(),
        n: 120,
        l: 40,
        amp_law: AmplitudeLaw::Gaussian,
        seed: 5,
    };
    let panel = generate_panel(&cfg).unwrap();
    let (est, _) = estimate_centers(&panel, 1, &SubspaceOptions::default()).unwrap();
    assert!((est.theta_hat[0] - omega).abs() < 1e-3, "{:?}", est.theta_hat);
}

#[test]
fn rank_override_is_respected() {
    let panel = generate_panel(&uniform_panel(vec![0.8, 2.1], 0.1, 80, 50, 15.0, 2)).unwrap();
    let opts = SubspaceOptions {
        cov: CovOptions {
            rank_override: Some(12),
            ..CovOptions::default()
        },
        ..SubspaceOptions::default()
    };
    let (est, cov) = estimate_centers(&panel, 2, &opts).unwrap();
    assert_eq!(cov.rank_hat, 12);
    assert_eq!(est.rank_hat, 12);
    assert_eq!(est.phases.len() * 2 + est.boundary_phases.len(), 12);
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse::<f64>().unwrap())
        .collect()
}

#[test]
fn summary_is_recomputable_from_trials() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = McConfig::new(60, 40, 15.0);
    cfg.trials = 12;
    cfg.master_seed = 4;
    cfg.outputs = Some(dir.path().to_path_buf());
    let campaign = run_campaign(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for (col, key) in [("theta_rel_err", "theta_rel_err"), ("w_rel_err", "w_rel_err"), ("map_rel_err", "map_rel_err")] {
        let stats = BoxStats::from_values(&csv_column(&text, col)).unwrap();
        let stored: BoxStats = serde_json::from_value(summary["points"][0][key].clone()).unwrap();
        assert!((stats.median - stored.median).abs() < 1e-12 * stored.median.abs().max(1.0));
        assert!((stats.q3 - stored.q3).abs() < 1e-12 * stored.q3.abs().max(1.0));
        assert_eq!(stats.count, stored.count);
    }
    assert_eq!(campaign.records[0].len(), 12);
}

#[test]
fn campaign_is_deterministic_and_trials_isolated() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut cfg = McConfig::new(50, 30, 10.0);
    cfg.trials = 5;
    cfg.timing = false;
    let mut outputs = Vec::new();
    for d in &dirs {
        cfg.outputs = Some(d.path().to_path_buf());
        run_campaign(&cfg).unwrap();
        outputs.push(fs::read(d.path().join("trials.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let campaign = run_campaign(&McConfig { outputs: None, ..cfg.clone() }).unwrap();
    let alone: TrialRecord = run_trial(&cfg, cfg.points()[0], 3).unwrap();
    assert_eq!(
        specband::harness::trial_csv_row(&alone),
        specband::harness::trial_csv_row(&campaign.records[0][3])
    );
}

#[test]
fn sweeps_share_hyperparameters() {
    let mut cfg = McConfig::new(50, 50, 15.0);
    cfg.trials = 3;
    cfg.n = specband::harness::Sweep::Many(vec![50, 80]);
    cfg.l = None;
    cfg.run_map = false;
    let dir = tempfile::tempdir().unwrap();
    cfg.outputs = Some(dir.path().to_path_buf());
    let c = run_campaign(&cfg).unwrap();
    assert_eq!(c.summary.points.len(), 2);
    assert_eq!(c.summary.points[1].point.l, 80);
    for (a, b) in c.records[0].iter().zip(&c.records[1]) {
        assert_eq!(a.theta_true, b.theta_true);
        assert_eq!(a.w_true, b.w_true);
    }
    assert!(dir.path().join("trials_0.csv").exists());
    assert!(dir.path().join("trials_1.csv").exists());
}

#[test]
fn failing_trials_are_flagged_not_fatal() {
    let mut cfg = McConfig::new(40, 20, 15.0);
    cfg.trials = 3;
    // one eigenvector yields no conjugate phase pair
    cfg.subspace.cov.rank_override = Some(1);
    let c = run_campaign(&cfg).unwrap();
    assert_eq!(c.summary.points[0].failed, 3);
    assert!(c.records[0].iter().all(|r| r.flags.contains(&Flag::TrialFailed)));
    assert!(c.records[0].iter().all(|r| r.theta_rel_err.is_nan()));
}

#[test]
fn thread_cap_does_not_change_results() {
    let mut cfg = McConfig::new(50, 30, 15.0);
    cfg.trials = 4;
    cfg.timing = false;
    let free = run_campaign(&cfg).unwrap();
    std::env::set_var(specband::harness::THREADS_ENV, "1");
    let capped = run_campaign(&cfg).unwrap();
    std::env::remove_var(specband::harness::THREADS_ENV);
    for (a, b) in free.records[0].iter().zip(&capped.records[0]) {
        assert_eq!(specband::harness::trial_csv_row(a), specband::harness::trial_csv_row(b));
    }
}
