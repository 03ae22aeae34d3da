//! Covariance estimation from snapshot panels and the first-stage
//! hyperparameter estimates derived from it.

use std::f64::consts::PI;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diag::{raise, Flag};
use crate::error::{Error, Result};
use crate::linalg::{EigenSystem, ToeplitzCovariance};
use crate::signal::SnapshotPanel;

/// Eigenvalues at or below this fraction of the largest are treated as
/// numerically zero by the ratio rank search.
pub const RANK_ZERO_FLOOR: f64 = 1e-12;

/// Which cross-sectional estimator feeds the eigen-analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovEstimator {
    /// Average of per-path Toeplitz ACF matrices.
    #[default]
    Toeplitz,
    /// Average of centered outer products `Y_k Y_kᵀ`.
    OuterProduct,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovOptions {
    pub estimator: CovEstimator,
    /// Upper index of the ratio rank search; `None` means `N/2`.
    pub search_max: Option<usize>,
    /// Skip the ratio search and use this rank.
    pub rank_override: Option<usize>,
}

/// Observed-process covariance estimate and the quantities read off it.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    /// `Σ̂_{N,L}` as a Toeplitz first column. For the outer-product estimator
    /// this is the diagonal average of the matrix that was decomposed.
    pub sigma_hat: ToeplitzCovariance,
    pub eigen: EigenSystem,
    /// `σ̂_w²`, the smallest eigenvalue floored at 0.
    pub noise_floor: f64,
    /// `σ̂_x² = σ̂_y(0) − σ̂_w²`, clamped at 0.
    pub signal_variance: f64,
    pub rank_hat: usize,
    pub w_hat: f64,
    pub nu: usize,
    pub flags: Vec<Flag>,
}

/// Serializable summary of a [`CovEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub first_column: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub noise_floor: f64,
    pub signal_variance: f64,
    pub rank_hat: usize,
    #[serde(rename = "W_hat")]
    pub w_hat: f64,
    pub nu: usize,
    pub flags: Vec<Flag>,
}

impl CovEstimate {
    pub fn report(&self) -> CovReport {
        CovReport {
            first_column: self.sigma_hat.first_column.clone(),
            eigenvalues: self.eigen.values.clone(),
            noise_floor: self.noise_floor,
            signal_variance: self.signal_variance,
            rank_hat: self.rank_hat,
            w_hat: self.w_hat,
            nu: self.nu,
            flags: self.flags.clone(),
        }
    }

    /// `K̂_N = Σ̂_N − σ̂_w² I`.
    pub fn signal_cov(&self) -> ToeplitzCovariance {
        self.sigma_hat.shifted(-self.noise_floor)
    }
}

/// Removes each snapshot's time mean.
pub fn center_panel(panel: &SnapshotPanel) -> SnapshotPanel {
    let mut data = panel.data.clone();
    for mut row in data.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    SnapshotPanel {
        data,
        truth: panel.truth.clone(),
    }
}

/// Per-path ACF `σ̂_k(τ) = 1/(N−τ) Σ_{t=1}^{N−τ} y(t+τ) y(t)`.
fn path_acf(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    (0..n)
        .map(|tau| {
            let s: f64 = row[tau..].iter().zip(row).map(|(a, b)| a * b).sum();
            s / (n - tau) as f64
        })
        .collect()
}

/// Cross-sectional mean of per-path Toeplitz ACF estimates.
///
/// The panel should already be centered (see [`center_panel`]).
pub fn toeplitz_cov_estimate(panel: &SnapshotPanel) -> Result<ToeplitzCovariance> {
    let (l, n) = (panel.snapshots(), panel.samples());
    if l == 0 || n == 0 {
        return Err(Error::InvalidDimension("empty panel".into()));
    }
    let acfs: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|k| path_acf(&panel.row(k)))
        .collect();
    // summed in path order so the result does not depend on scheduling
    let mut sum = vec![0.0; n];
    for acf in &acfs {
        sum.iter_mut().zip(acf).for_each(|(a, v)| *a += v);
    }
    ToeplitzCovariance::new(sum.into_iter().map(|v| v / l as f64).collect())
}

/// `(1/L) Σ_k Y_k Y_kᵀ` over centered snapshot columns.
pub fn outer_product_cov_estimate(panel: &SnapshotPanel) -> DMatrix<f64> {
    let l = panel.snapshots().max(1);
    let y = &panel.data;
    let mut m = y.transpose() * y / l as f64;
    // exact symmetry
    let sym = (&m + m.transpose()) * 0.5;
    m.copy_from(&sym);
    m
}

/// `σ̂_w²`: smallest eigenvalue, floored at 0.
pub fn noise_floor(eigen: &EigenSystem) -> f64 {
    eigen.values.last().copied().unwrap_or(0.0).max(0.0)
}

/// Default upper index of the ratio search.
pub fn default_search_max(n: usize) -> usize {
    (n / 2).max(1)
}

/// Knee of the spectrum: `argmax_{1 ≤ k ≤ search_max} λ_k² / λ_{k+1}²`
/// (1-based), ties resolved to the smallest index.
///
/// An eigenvalue at or below [`RANK_ZERO_FLOOR`]·λ₁ makes the preceding ratio
/// infinite, so the search stops at the first numerically zero eigenvalue.
pub fn rank_by_ratio(values: &[f64], search_max: usize) -> Result<usize> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidDimension("need at least two eigenvalues".into()));
    }
    let top = values[0];
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("leading eigenvalue is not positive".into()));
    }
    let last = search_max.clamp(1, n - 1);
    let zero = RANK_ZERO_FLOOR * top;
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 1..=last {
        let (cur, next) = (values[k - 1], values[k]);
        if next <= zero {
            return Ok(k);
        }
        let ratio = (cur * cur) / (next * next);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    if best.1 <= 1.0 {
        // nothing ever drops
        let spread = values[0] - values[last];
        if spread.abs() <= f64::EPSILON * top.abs() {
            return Err(Error::NoSpectralKnee);
        }
    }
    Ok(best.0)
}

/// `Ŵ = (π/2) · rank / (ν N)`, clamped to `(0, π/2]`.
pub fn bandwidth_from_rank(rank_hat: usize, nu: usize, n: usize) -> f64 {
    let w = 0.5 * PI * rank_hat.max(1) as f64 / (nu.max(1) * n.max(1)) as f64;
    w.min(0.5 * PI)
}

/// Full first stage: center, estimate `Σ̂`, decompose, read off noise floor,
/// signal variance, rank and bandwidth.
pub fn estimate_cov(panel: &SnapshotPanel, nu: usize, opts: &CovOptions) -> Result<CovEstimate> {
    let n = panel.samples();
    if n < 3 {
        return Err(Error::InvalidDimension(format!("N = {n}, need N >= 3")));
    }
    if nu == 0 {
        return Err(Error::InvalidArgument("ν must be >= 1".into()));
    }
    let centered = center_panel(panel);
    let (sigma_hat, eigen) = match opts.estimator {
        CovEstimator::Toeplitz => {
            let t = toeplitz_cov_estimate(&centered)?;
            let e = t.eigen();
            (t, e)
        }
        CovEstimator::OuterProduct => {
            let m = outer_product_cov_estimate(&centered);
            let col = (0..n)
                .map(|tau| (0..n - tau).map(|i| m[(i + tau, i)]).sum::<f64>() / (n - tau) as f64)
                .collect();
            (ToeplitzCovariance::new(col)?, EigenSystem::from_symmetric(&m))
        }
    };
    analyze_covariance(sigma_hat, eigen, nu, opts)
}

/// Second half of [`estimate_cov`] on an already decomposed covariance.
pub fn analyze_covariance(
    sigma_hat: ToeplitzCovariance,
    eigen: EigenSystem,
    nu: usize,
    opts: &CovOptions,
) -> Result<CovEstimate> {
    let n = eigen.dim();
    let mut flags = Vec::new();
    let floor = noise_floor(&eigen);
    let mut signal_variance = sigma_hat.first_column[0] - floor;
    if signal_variance < 0.0 {
        warn!("noise floor {floor} exceeds lag-0 variance; clamping signal variance to 0");
        signal_variance = 0.0;
        raise(&mut flags, Flag::SignalVarianceClamped);
    }
    let rank_hat = match opts.rank_override {
        Some(r) => r,
        None => rank_by_ratio(
            &eigen.values,
            opts.search_max.unwrap_or_else(|| default_search_max(n)),
        )?,
    }
    .clamp(1, n - 1);
    let w_hat = bandwidth_from_rank(rank_hat, nu, n);
    Ok(CovEstimate {
        sigma_hat,
        eigen,
        noise_floor: floor,
        signal_variance,
        rank_hat,
        w_hat,
        nu,
        flags,
    })
}

/// Outcome of the lag-1 arccos estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArccosEstimate {
    pub theta: f64,
    /// The arccos argument was outside `[−1, 1]` and got clamped.
    pub clamped: bool,
}

/// Single-frequency center estimate `arccos(σ̂_x(1)/σ̂_x² · Ŵ/sin Ŵ)`.
pub fn arccos_center_estimate(est: &CovEstimate) -> Result<ArccosEstimate> {
    if est.nu != 1 {
        return Err(Error::InvalidArgument(format!(
            "arccos estimator needs ν = 1, got {}",
            est.nu
        )));
    }
    if !(est.signal_variance > 0.0) {
        return Err(Error::UndefinedEstimate(
            "signal variance estimate is not positive".into(),
        ));
    }
    // white noise does not touch lag 1
    let lag1 = est.sigma_hat.lag(1);
    let arg = lag1 / est.signal_variance / crate::kernel::sinc(est.w_hat);
    let clamped = !(-1.0..=1.0).contains(&arg);
    if clamped {
        warn!("arccos argument {arg} clamped to [-1, 1]");
    }
    Ok(ArccosEstimate {
        theta: arg.clamp(-1.0, 1.0).acos(),
        clamped,
    })
}
