//! Monte-Carlo campaigns: random hyperparameters, synthetic panels, the full
//! estimation chain, error metrics and persisted results.
//!
//! Trial `i` reads ChaCha8 stream `i` under the master seed for its
//! hyperparameters and panel seed, so every sweep point sees the same
//! `(θ, W)` draws and a campaign is a pure function of its config.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diag::{raise, Flag};
use crate::error::{Error, Result};
use crate::kernel::PriorHyperParams;
use crate::map::{map_refine, MapProblem, RidgeSchedule};
use crate::signal::{generate_panel, snr_to_noise_variance, stream_rng, AmplitudeLaw, PanelConfig};
use crate::stats::BoxStats;
use crate::subspace::{estimate_centers, SubspaceOptions};

pub const RETRY_CAP: usize = 10_000;
pub const THREADS_ENV: &str = "SPECBAND_THREADS";

/// A scalar or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Sweep<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Sweep::One(v) => vec![v.clone()],
            Sweep::Many(v) => v.clone(),
        }
    }
}

/// How `(θ, W)` are drawn for each trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSampling {
    #[serde(default = "default_w_min")]
    pub w_min: f64,
    #[serde(default = "default_w_max")]
    pub w_max: f64,
    /// Bound `b` of the `U[−b, b]` amplitude law; `σ² = b²/3`.
    #[serde(default = "default_amp_bound")]
    pub amp_bound: f64,
    #[serde(default = "default_amp_law")]
    pub amp_law: AmplitudeLaw,
}

fn default_w_min() -> f64 {
    2.0 * PI * 0.01
}
fn default_w_max() -> f64 {
    2.0 * PI * 0.05
}
fn default_amp_bound() -> f64 {
    1.3813
}
fn default_amp_law() -> AmplitudeLaw {
    AmplitudeLaw::Uniform
}

impl Default for HyperSampling {
    fn default() -> Self {
        Self {
            w_min: default_w_min(),
            w_max: default_w_max(),
            amp_bound: default_amp_bound(),
            amp_law: default_amp_law(),
        }
    }
}

impl HyperSampling {
    pub fn amp_variance(&self) -> f64 {
        self.amp_bound * self.amp_bound / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(rename = "N")]
    pub n: Sweep<usize>,
    /// Snapshot counts; absent means `L = N` at every sweep point.
    #[serde(rename = "L", default)]
    pub l: Option<Sweep<usize>>,
    #[serde(default = "default_snr")]
    pub snr_db: Sweep<f64>,
    #[serde(default = "default_nu")]
    pub nu: usize,
    #[serde(default)]
    pub hyper_sampling: HyperSampling,
    #[serde(default)]
    pub master_seed: u64,
    /// Output directory; nothing is written when absent.
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub run_map: bool,
    #[serde(default)]
    pub subspace: SubspaceOptions,
    #[serde(default)]
    pub ridge: RidgeSchedule,
    /// Record wall time per trial; `false` writes 0 so reruns are byte-identical.
    #[serde(default = "default_true")]
    pub timing: bool,
}

fn default_trials() -> usize {
    100
}
fn default_snr() -> Sweep<f64> {
    Sweep::One(15.0)
}
fn default_nu() -> usize {
    2
}
fn default_true() -> bool {
    true
}

/// One `(N, L, SNR)` combination of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub snr_db: f64,
}

impl McConfig {
    /// Desk-scale default: one point, `N = L`, 15 dB, ν = 2.
    pub fn new(n: usize, l: usize, snr_db: f64) -> Self {
        Self {
            trials: default_trials(),
            n: Sweep::One(n),
            l: Some(Sweep::One(l)),
            snr_db: Sweep::One(snr_db),
            nu: default_nu(),
            hyper_sampling: HyperSampling::default(),
            master_seed: 0,
            outputs: None,
            run_map: true,
            subspace: SubspaceOptions::default(),
            ridge: RidgeSchedule::None,
            timing: true,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.nu == 0 {
            return Err(Error::InvalidArgument("ν must be >= 1".into()));
        }
        let ns = self.n.values();
        let snrs = self.snr_db.values();
        let ls = self.l.as_ref().map(Sweep::values);
        if ns.is_empty() || snrs.is_empty() || ls.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidArgument("sweep lists must be nonempty".into()));
        }
        if ns.iter().chain(ls.iter().flatten()).any(|&v| v < 2) {
            return Err(Error::InvalidDimension("N and L must be >= 2".into()));
        }
        let h = &self.hyper_sampling;
        if !(h.w_min > 0.0 && h.w_min <= h.w_max && h.w_max < PI / 2.0) {
            return Err(Error::InvalidHyperParams(format!(
                "W range [{}, {}] must satisfy 0 < min <= max < π/2",
                h.w_min, h.w_max
            )));
        }
        if !(h.amp_bound > 0.0) {
            return Err(Error::InvalidHyperParams("amplitude bound must be > 0".into()));
        }
        Ok(())
    }

    /// Sweep points in order N, then L, then SNR.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for n in self.n.values() {
            let ls = self.l.as_ref().map_or_else(|| vec![n], Sweep::values);
            for l in ls {
                for snr_db in self.snr_db.values() {
                    out.push(SweepPoint { n, l, snr_db });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperDraw {
    /// Sorted centers.
    pub theta: Vec<f64>,
    pub w: f64,
}

/// Draws `W ~ U[w_min, w_max]`, then centers `θ_ℓ ~ U[W, π−W]` until all
/// pairwise gaps exceed `2W`. Also returns the number of center draws used.
pub fn sample_hyperparams_counted<R: Rng + ?Sized>(
    rng: &mut R,
    nu: usize,
    sampling: &HyperSampling,
) -> Result<(HyperDraw, usize)> {
    if nu == 0 {
        return Err(Error::InvalidArgument("ν must be >= 1".into()));
    }
    let w = if sampling.w_max > sampling.w_min {
        rng.random_range(sampling.w_min..sampling.w_max)
    } else {
        sampling.w_min
    };
    for attempt in 1..=RETRY_CAP {
        let mut theta: Vec<f64> = (0..nu).map(|_| rng.random_range(w..PI - w)).collect();
        theta.sort_by(f64::total_cmp);
        let separated = theta.windows(2).all(|p| p[1] - p[0] > 2.0 * w);
        // open-interval endpoints keep the draw a valid prior
        let interior = theta.iter().all(|&t| t > w && t + w < PI);
        if separated && interior {
            return Ok((HyperDraw { theta, w }, attempt));
        }
    }
    Err(Error::RetryCapExceeded(RETRY_CAP))
}

pub fn sample_hyperparams<R: Rng + ?Sized>(
    rng: &mut R,
    nu: usize,
    sampling: &HyperSampling,
) -> Result<HyperDraw> {
    sample_hyperparams_counted(rng, nu, sampling).map(|(d, _)| d)
}

/// Signed `(Ŵ − W)/W`.
pub fn relative_bandwidth_error(w_hat: f64, w: f64) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::InvalidArgument("W = 0".into()));
    }
    Ok((w_hat - w) / w)
}

/// `‖θ̂ − θ‖/‖θ‖` with both vectors matched in sorted order.
pub fn relative_center_error(theta_hat: &[f64], theta: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta.len() || theta.is_empty() {
        return Err(Error::InvalidDimension(format!(
            "{} estimates for {} centers",
            theta_hat.len(),
            theta.len()
        )));
    }
    let mut a = theta_hat.to_vec();
    let mut b = theta.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub theta_true: Vec<f64>,
    pub w_true: f64,
    pub w_hat: f64,
    pub w_rel_err: f64,
    pub theta_hat: Vec<f64>,
    pub theta_rel_err: f64,
    pub omega_map: Vec<f64>,
    pub map_rel_err: f64,
    pub rank_hat: usize,
    pub flags: Vec<Flag>,
    pub ms: f64,
}

impl TrialRecord {
    fn failed(trial: usize, draw: &HyperDraw) -> Self {
        let nan = vec![f64::NAN; draw.theta.len()];
        Self {
            trial,
            theta_true: draw.theta.clone(),
            w_true: draw.w,
            w_hat: f64::NAN,
            w_rel_err: f64::NAN,
            theta_hat: nan.clone(),
            theta_rel_err: f64::NAN,
            omega_map: nan,
            map_rel_err: f64::NAN,
            rank_hat: 0,
            flags: vec![Flag::TrialFailed],
            ms: 0.0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.flags.contains(&Flag::TrialFailed)
    }
}

/// Draws the trial's hyperparameters and panel, runs covariance, subspace and
/// (optionally) MAP estimation. Stage failures are recorded, not returned.
pub fn run_trial(cfg: &McConfig, point: SweepPoint, trial: usize) -> Result<TrialRecord> {
    let start = Instant::now();
    let mut rng = stream_rng(cfg.master_seed, trial as u64);
    let draw = sample_hyperparams(&mut rng, cfg.nu, &cfg.hyper_sampling)?;
    let panel_seed = rng.next_u64();
    let sigma2 = cfg.hyper_sampling.amp_variance();
    let mut rec = TrialRecord::failed(trial, &draw);
    let outcome = (|| -> Result<()> {
        let prior = PriorHyperParams::new(
            draw.theta.clone(),
            draw.w,
            sigma2,
            snr_to_noise_variance(point.snr_db, sigma2)?,
        )?;
        let panel = generate_panel(&PanelConfig {
            prior,
            n: point.n,
            l: point.l,
            amp_law: cfg.hyper_sampling.amp_law,
            seed: panel_seed,
        })?;
        let (est, _) = estimate_centers(&panel, cfg.nu, &cfg.subspace)?;
        rec.flags = est.flags.clone();
        rec.rank_hat = est.rank_hat;
        rec.w_hat = est.w_hat;
        rec.w_rel_err = relative_bandwidth_error(est.w_hat, draw.w)?;
        rec.theta_rel_err = relative_center_error(&est.theta_hat, &draw.theta)?;
        rec.theta_hat = est.theta_hat.clone();
        if cfg.run_map {
            let y: DMatrix<f64> = panel.data.transpose();
            let mut problem = MapProblem::new(y, est.theta_hat.clone(), est.w_hat);
            problem.ridge = cfg.ridge;
            let res = map_refine(&problem)?;
            for f in res.flags {
                raise(&mut rec.flags, f);
            }
            rec.map_rel_err = relative_center_error(&res.omega_map, &draw.theta)?;
            rec.omega_map = res.omega_map;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("trial {trial} at {point:?} failed: {e}");
        raise(&mut rec.flags, Flag::TrialFailed);
    }
    if cfg.timing {
        rec.ms = start.elapsed().as_secs_f64() * 1e3;
    }
    Ok(rec)
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NaN".into()
    }
}

pub fn trials_csv_header(nu: usize) -> String {
    let mut cols = vec!["trial".to_string()];
    cols.extend((1..=nu).map(|i| format!("theta_true_{i}")));
    cols.extend(["w_true", "w_hat", "w_rel_err"].map(String::from));
    cols.extend((1..=nu).map(|i| format!("theta_hat_{i}")));
    cols.push("theta_rel_err".into());
    cols.extend((1..=nu).map(|i| format!("omega_map_{i}")));
    cols.extend(["map_rel_err", "rank_hat", "flags", "ms"].map(String::from));
    cols.join(",")
}

pub fn trial_csv_row(r: &TrialRecord) -> String {
    let mut cols = vec![r.trial.to_string()];
    cols.extend(r.theta_true.iter().map(|&x| fmt_num(x)));
    cols.extend([r.w_true, r.w_hat, r.w_rel_err].map(fmt_num));
    cols.extend(r.theta_hat.iter().map(|&x| fmt_num(x)));
    cols.push(fmt_num(r.theta_rel_err));
    cols.extend(r.omega_map.iter().map(|&x| fmt_num(x)));
    cols.push(fmt_num(r.map_rel_err));
    cols.push(r.rank_hat.to_string());
    cols.push(r.flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(";"));
    cols.push(format!("{:.3}", r.ms));
    cols.join(",")
}

pub fn write_trials_csv<W: Write>(mut out: W, nu: usize, records: &[TrialRecord]) -> Result<()> {
    writeln!(out, "{}", trials_csv_header(nu))?;
    for r in records {
        writeln!(out, "{}", trial_csv_row(r))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub trials: usize,
    pub failed: usize,
    pub trials_file: Option<String>,
    pub w_rel_err: Option<BoxStats>,
    pub w_abs_rel_err: Option<BoxStats>,
    pub theta_rel_err: Option<BoxStats>,
    pub map_rel_err: Option<BoxStats>,
}

impl PointSummary {
    pub fn from_records(point: SweepPoint, records: &[TrialRecord]) -> Self {
        let col = |f: fn(&TrialRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
        Self {
            point,
            trials: records.len(),
            failed: records.iter().filter(|r| r.is_failed()).count(),
            trials_file: None,
            w_rel_err: BoxStats::from_values(&col(|r| r.w_rel_err)),
            w_abs_rel_err: BoxStats::from_values(&col(|r| r.w_rel_err.abs())),
            theta_rel_err: BoxStats::from_values(&col(|r| r.theta_rel_err)),
            map_rel_err: BoxStats::from_values(&col(|r| r.map_rel_err)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub master_seed: u64,
    pub nu: usize,
    pub points: Vec<PointSummary>,
}

/// Results of a campaign, records grouped by sweep point.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub summary: CampaignSummary,
    pub records: Vec<Vec<TrialRecord>>,
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn run_points(cfg: &McConfig) -> Result<Vec<Vec<TrialRecord>>> {
    cfg.points()
        .into_iter()
        .map(|point| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|i| run_trial(cfg, point, i))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Runs every sweep point and, if `outputs` is set, writes `summary.json`
/// and one trials CSV per point (`trials.csv` for a single point,
/// `trials_<index>.csv` otherwise).
pub fn run_campaign(cfg: &McConfig) -> Result<Campaign> {
    cfg.validate()?;
    let records = match thread_cap() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| run_points(cfg))?,
        None => run_points(cfg)?,
    };
    let points = cfg.points();
    let single = points.len() == 1;
    let mut summaries: Vec<PointSummary> = points
        .iter()
        .zip(&records)
        .map(|(&p, r)| PointSummary::from_records(p, r))
        .collect();
    if let Some(dir) = &cfg.outputs {
        fs::create_dir_all(dir)?;
        for (idx, (s, recs)) in summaries.iter_mut().zip(&records).enumerate() {
            let name = if single {
                "trials.csv".to_string()
            } else {
                format!("trials_{idx}.csv")
            };
            let file = fs::File::create(dir.join(&name))?;
            write_trials_csv(std::io::BufWriter::new(file), cfg.nu, recs)?;
            s.trials_file = Some(name);
        }
    }
    let summary = CampaignSummary {
        master_seed: cfg.master_seed,
        nu: cfg.nu,
        points: summaries,
    };
    if let Some(dir) = &cfg.outputs {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(Campaign { summary, records })
}
