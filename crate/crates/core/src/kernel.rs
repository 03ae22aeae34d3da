//! Modulated-sinc covariance kernels and the band/time concentration matrix.
//!
//! A uniform prior of half-width `W` around each center `θ_ℓ` turns the
//! random-frequency signal into a stationary process with covariance
//!
//! `K(τ) = σ² · sinc(Wτ) · Σ_ℓ cos(θ_ℓ τ)`
//!
//! whose spectral density is flat on the symmetric support
//! `S = ∪_ℓ [θ_ℓ−W, θ_ℓ+W] ∪ [−θ_ℓ−W, −θ_ℓ+W]`. The `N × N` covariance is a
//! scalar multiple of the concentration matrix `R[j,k] = ρ(j−k)` built from
//! the impulse response of the ideal bandpass filter on `S`, so its
//! eigenvalues inherit the plateau/collapse structure of `R`: roughly
//! `N·m(S)/2π` eigenvalues near the top and the rest near zero.
//!
//! The trace identity `Σλ_j = N·m(J)/2π` is exact for every `N`. The mean of
//! squared eigenvalues only converges to `m(J)/2π`; the gap is what drives the
//! plateau to sharpen as `N` grows. [`verify_trace_identities`] reports both.

use std::f64::consts::PI;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, EigenSystem, ToeplitzCovariance};

/// Hyperparameters of the uniform frequency prior plus amplitude and noise
/// variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHyperParams {
    /// Center frequencies `θ_ℓ` in radians/sample.
    pub centers: Vec<f64>,
    /// Common half-bandwidth `W` in radians.
    pub half_bandwidth: f64,
    /// Per-component amplitude variance `σ²`.
    pub amp_variance: f64,
    /// Additive white-noise variance `σ_w²`.
    pub noise_variance: f64,
}

impl PriorHyperParams {
    pub fn new(
        centers: Vec<f64>,
        half_bandwidth: f64,
        amp_variance: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        let params = Self {
            centers,
            half_bandwidth,
            amp_variance,
            noise_variance,
        };
        params.validate()?;
        Ok(params)
    }

    /// Baseband sinc kernel (`θ = 0`, a single interval `[−W, W]`).
    ///
    /// This is the classical prolate case; it does not satisfy the two-interval
    /// support rule and so bypasses [`PriorHyperParams::validate`].
    pub fn baseband(half_bandwidth: f64, amp_variance: f64) -> Self {
        Self {
            centers: vec![0.0],
            half_bandwidth,
            amp_variance,
            noise_variance: 0.0,
        }
    }

    pub fn nu(&self) -> usize {
        self.centers.len()
    }

    /// Checks the support rules. `W = 0` is accepted as the degenerate point
    /// prior.
    pub fn validate(&self) -> Result<()> {
        let w = self.half_bandwidth;
        if self.centers.is_empty() {
            return Err(Error::InvalidHyperParams("no center frequencies".into()));
        }
        if !(w.is_finite() && (0.0..PI).contains(&w)) {
            return Err(Error::InvalidHyperParams(format!(
                "half-bandwidth {w} outside [0, π)"
            )));
        }
        for &theta in &self.centers {
            if !(theta > w && theta + w < PI) {
                return Err(Error::InvalidHyperParams(format!(
                    "center {theta} violates W < θ < π − W with W = {w}"
                )));
            }
        }
        let mut sorted = self.centers.clone();
        sorted.sort_by(f64::total_cmp);
        if let Some(pair) = sorted.windows(2).find(|p| p[1] - p[0] <= 2.0 * w) {
            return Err(Error::InvalidHyperParams(format!(
                "supports around {} and {} overlap",
                pair[0], pair[1]
            )));
        }
        if !(self.amp_variance > 0.0 && self.amp_variance.is_finite()) {
            return Err(Error::InvalidHyperParams("amplitude variance must be > 0".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidHyperParams("noise variance must be >= 0".into()));
        }
        Ok(())
    }

    /// Symmetrized support `S` of the prior as a frequency band.
    pub fn support_band(&self) -> Result<FrequencyBand> {
        let w = self.half_bandwidth;
        let mut intervals = Vec::with_capacity(2 * self.nu());
        for &theta in &self.centers {
            if theta.abs() <= w {
                // the mirrored intervals merge into one
                intervals.push((-theta.abs() - w, theta.abs() + w));
            } else {
                intervals.push((theta - w, theta + w));
                intervals.push((-theta - w, -theta + w));
            }
        }
        FrequencyBand::new(intervals)
    }
}

/// Union of pairwise disjoint closed subintervals of `[−π, π]`, kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    intervals: Vec<(f64, f64)>,
}

impl FrequencyBand {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidBand("no intervals".into()));
        }
        for &(a, b) in &intervals {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidBand(format!("degenerate interval [{a}, {b}]")));
            }
            if a < -PI - 1e-12 || b > PI + 1e-12 {
                return Err(Error::InvalidBand(format!("[{a}, {b}] leaves [−π, π]")));
            }
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        if let Some(p) = intervals.windows(2).find(|p| p[0].1 >= p[1].0) {
            return Err(Error::InvalidBand(format!(
                "intervals [{}, {}] and [{}, {}] overlap",
                p[0].0, p[0].1, p[1].0, p[1].1
            )));
        }
        Ok(Self { intervals })
    }

    /// The whole circle `[−π, π]`.
    pub fn full() -> Self {
        Self {
            intervals: vec![(-PI, PI)],
        }
    }

    /// `[−w, w]`.
    pub fn baseband(w: f64) -> Result<Self> {
        Self::new(vec![(-w, w)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Lebesgue measure `m(J)`.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Normalized measure `m(J)/2π`, the asymptotic fraction of unit eigenvalues.
    pub fn fraction(&self) -> f64 {
        self.measure() / (2.0 * PI)
    }

    pub fn is_symmetric(&self) -> bool {
        const TOL: f64 = 1e-12;
        let n = self.intervals.len();
        (0..n).all(|i| {
            let (a, b) = self.intervals[i];
            let (c, d) = self.intervals[n - 1 - i];
            (a + d).abs() <= TOL && (b + c).abs() <= TOL
        })
    }
}

/// `sin(x)/x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Signal covariance `σ² · sinc(Wτ) · Σ_ℓ cos(θ_ℓ τ)` at integer lag `tau`.
/// The noise term is not included.
pub fn modulated_sinc_cov(params: &PriorHyperParams, tau: i64) -> f64 {
    let t = tau as f64;
    let carrier: f64 = params.centers.iter().map(|&theta| (theta * t).cos()).sum();
    params.amp_variance * sinc(params.half_bandwidth * t) * carrier
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("N = {n}, need N >= 2")));
    }
    Ok(())
}

/// `K_N`: the `N × N` symmetric Toeplitz signal covariance.
pub fn build_signal_cov(params: &PriorHyperParams, n: usize) -> Result<ToeplitzCovariance> {
    check_size(n)?;
    let col = (0..n as i64).map(|tau| modulated_sinc_cov(params, tau)).collect();
    ToeplitzCovariance::new(col)
}

/// `Σ_N = K_N + σ_w² I`.
pub fn build_observed_cov(params: &PriorHyperParams, n: usize) -> Result<ToeplitzCovariance> {
    Ok(build_signal_cov(params, n)?.shifted(params.noise_variance))
}

/// Impulse response `ρ(t) = (1/2π) ∫_J e^{itω} dω` of the ideal bandpass
/// filter on `band`, in closed form per interval.
pub fn bandpass_impulse_response(band: &FrequencyBand, t: i64) -> Complex<f64> {
    if t == 0 {
        return Complex::new(band.fraction(), 0.0);
    }
    let tf = t as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for &(a, b) in band.intervals() {
        // (e^{itb} − e^{ita}) / (it), via sum-to-product to avoid cancellation
        let half_width = 0.5 * tf * (b - a);
        let mid = 0.5 * tf * (a + b);
        let s = half_width.sin();
        re += 2.0 * mid.cos() * s / tf;
        im += 2.0 * mid.sin() * s / tf;
    }
    Complex::new(re, im) / (2.0 * PI)
}

/// Concentration matrix `R[j,k] = ρ(j−k)` for a band symmetric about 0.
pub fn concentration_matrix(band: &FrequencyBand, n: usize) -> Result<ToeplitzCovariance> {
    if n == 0 {
        return Err(Error::InvalidDimension("N = 0".into()));
    }
    if !band.is_symmetric() {
        return Err(Error::InvalidBand(
            "band is not symmetric about the origin; R would be complex Hermitian".into(),
        ));
    }
    let col = (0..n as i64)
        .map(|t| bandpass_impulse_response(band, t).re)
        .collect();
    ToeplitzCovariance::new(col)
}

/// Number of eigenvalues that are `>= gamma`, `M(γ, N)`.
pub fn eigen_count_at_least(es: &EigenSystem, gamma: f64) -> Result<usize> {
    count_at_least(&es.values, gamma)
}

/// [`eigen_count_at_least`] on a bare nonincreasing eigenvalue slice.
pub fn count_at_least(values: &[f64], gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("γ = {gamma} outside (0, 1)")));
    }
    Ok(values.partition_point(|&v| v >= gamma))
}

/// Gaps of the two eigenvalue moment identities for the concentration matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub n: usize,
    pub fraction: f64,
    pub eigen_sum: f64,
    pub eigen_sq_mean: f64,
    /// `|Σλ_j − N·m(J)/2π|`, exact up to rounding.
    pub trace_gap: f64,
    /// `|(1/N)Σλ_j² − m(J)/2π|`, vanishes only as `N → ∞`.
    pub sqsum_gap: f64,
}

/// Computes the trace and squared-eigenvalue identities of `R` for `band`.
///
/// The squared-sum gap equals `(1/N)Σ_j λ_j(1−λ_j)`, so it bounds how many
/// eigenvalues can sit strictly inside `(δ, 1−δ)`; its decay is the numeric
/// face of the plateau theorem.
pub fn verify_trace_identities(band: &FrequencyBand, n: usize) -> Result<TraceReport> {
    check_size(n)?;
    let r = concentration_matrix(band, n)?;
    let values = symmetric_eigenvalues(&r.to_matrix());
    let fraction = band.fraction();
    let eigen_sum: f64 = values.iter().sum();
    let eigen_sq_mean = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(TraceReport {
        n,
        fraction,
        eigen_sum,
        eigen_sq_mean,
        trace_gap: (eigen_sum - n as f64 * fraction).abs(),
        sqsum_gap: (eigen_sq_mean - fraction).abs(),
    })
}

/// Asymptotic rank `round(2νWN/π)` of `K_N`, clamped to `[1, N]`.
pub fn theoretical_rank(nu: usize, half_bandwidth: f64, n: usize) -> usize {
    let exact = 2.0 * nu as f64 * half_bandwidth * n as f64 / PI;
    let rounded = (exact + 0.5).floor();
    (rounded.max(1.0) as usize).min(n.max(1))
}
