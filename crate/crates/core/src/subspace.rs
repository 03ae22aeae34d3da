//! Subspace estimation of the prior's center frequencies.
//!
//! With `K_N` truncated at rank `n`, the signal is modelled as the output of
//! an autonomous system `ξ(t+1) = A ξ(t)`, `x(t) = c ξ(t)` with `A`
//! orthogonal. The top-`n` eigenvectors `H` of `Σ̂_N` play the role of the
//! observability matrix `[c; cA; cA²; …]`, so `A` follows from the
//! shift-invariance relation `H(2:k+1, :) ≈ H(1:k, :) A`, solved as an
//! orthogonal Procrustes problem. The eigen-phases of `A` form a line spectrum
//! clustered inside the prior supports; cluster means estimate the centers.

use std::f64::consts::PI;

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covest::{estimate_cov, CovEstimate, CovOptions};
use crate::diag::{raise, Flag};
use crate::error::{Error, Result};
use crate::linalg::EigenSystem;
use crate::signal::SnapshotPanel;

/// Phases within this distance of 0 or π are treated as real eigenvalues.
pub const BOUNDARY_PHASE_TOL: f64 = 1e-9;

/// Singular values below this fraction of the largest mark a degenerate
/// Procrustes cross-product.
const DEGENERATE_SV_REL: f64 = 1e-12;

/// Top-`n` eigenvectors of the covariance, `N × n` with orthonormal columns.
#[derive(Debug, Clone)]
pub struct ObservabilitySlice {
    pub h: DMatrix<f64>,
}

impl ObservabilitySlice {
    pub fn rank(&self) -> usize {
        self.h.ncols()
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }
}

/// Orthogonal state matrix and output row of the truncated realization.
#[derive(Debug, Clone)]
pub struct RotationRealization {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub singular_values: Vec<f64>,
    /// The Procrustes cross-product was rank deficient.
    pub degenerate: bool,
}

/// Keeps the leading `n` eigenvectors.
pub fn truncate_eigenvectors(eigen: &EigenSystem, n: usize) -> Result<ObservabilitySlice> {
    let dim = eigen.dim();
    if n == 0 || n >= dim {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {n} outside [1, {}]",
            dim.saturating_sub(1)
        )));
    }
    Ok(ObservabilitySlice {
        h: eigen.vectors.columns(0, n).into_owned(),
    })
}

/// Solves `min ‖H_k A − ↓H_k‖_F` over orthogonal `A`, where `H_k` holds rows
/// `1..k` of `h` and `↓H_k` rows `2..k+1`. `shift_depth` defaults to `N − 1`.
///
/// Accepts any `N × n` matrix; the orthonormal [`ObservabilitySlice`] is the
/// usual input.
pub fn solve_orthogonal_procrustes(
    h: &DMatrix<f64>,
    shift_depth: Option<usize>,
) -> Result<RotationRealization> {
    let (rows, n) = h.shape();
    if rows < 2 || n == 0 {
        return Err(Error::InvalidDimension(format!("{rows} x {n} observability slice")));
    }
    let k = shift_depth.unwrap_or(rows - 1);
    if k == 0 || k > rows - 1 {
        return Err(Error::InvalidArgument(format!(
            "shift depth {k} outside [1, {}]",
            rows - 1
        )));
    }
    let upper = h.rows(0, k);
    let shifted = h.rows(1, k);
    let cross = upper.transpose() * shifted;
    let svd = cross.svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Decomposition("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Decomposition("SVD did not return Vᵀ".into()))?;
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    let top = singular_values.iter().copied().fold(0.0, f64::max);
    let degenerate =
        top == 0.0 || singular_values.iter().any(|&s| s <= DEGENERATE_SV_REL * top);
    Ok(RotationRealization {
        a: u * v_t,
        c: h.row(0).transpose(),
        singular_values,
        degenerate,
    })
}

/// One eigenvalue of `A` on the unit circle with its share of the output
/// variance (`P = I`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    /// Phase in `(−π, π]`.
    pub phase: f64,
    pub weight: f64,
}

/// Walks the real Schur form of `A`; each 1×1 block is a real eigenvalue and
/// each 2×2 block a conjugate pair. Weights are `|(c T)_j|²` for the unitary
/// eigenvector matrix `T`, computed from the Schur vectors of each block.
fn spectral_lines(real: &RotationRealization) -> Result<Vec<SpectralLine>> {
    let n = real.a.nrows();
    let schur = Schur::try_new(real.a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Decomposition("real Schur form did not converge".into()))?;
    let (q, t) = schur.unpack();
    let proj = q.transpose() * &real.c;
    let mut lines = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let is_pair = i + 1 < n && t[(i + 1, i)].abs() > f64::EPSILON * (t[(i, i)].abs() + t[(i + 1, i + 1)].abs() + 1.0);
        if !is_pair {
            lines.push(SpectralLine {
                phase: if t[(i, i)] >= 0.0 { 0.0 } else { PI },
                weight: proj[i] * proj[i],
            });
            i += 1;
            continue;
        }
        let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let mean = 0.5 * (a + d);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        let mass = proj[i] * proj[i] + proj[i + 1] * proj[i + 1];
        if disc < 0.0 {
            let phase = (-disc).sqrt().atan2(mean);
            lines.push(SpectralLine { phase, weight: 0.5 * mass });
            lines.push(SpectralLine { phase: -phase, weight: 0.5 * mass });
        } else {
            // real pair left in a 2x2 block; split the mass evenly
            for root in [mean + disc.sqrt(), mean - disc.sqrt()] {
                lines.push(SpectralLine {
                    phase: if root >= 0.0 { 0.0 } else { PI },
                    weight: 0.5 * mass,
                });
            }
        }
        i += 2;
    }
    Ok(lines)
}

/// Eigen-phases of `A` split into the strictly positive ones used for
/// clustering and the real-eigenvalue phases at 0 or π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSet {
    /// Sorted phases in `(0, π)`.
    pub positive: Vec<f64>,
    /// Weights matching `positive` (one half of each conjugate pair).
    pub weights: Vec<f64>,
    /// Phases at 0 or π, excluded from clustering.
    pub boundary: Vec<f64>,
}

/// Eigenvalue arguments of `A`, conjugate pairs folded onto `(0, π)`.
pub fn phase_angles(real: &RotationRealization) -> Result<PhaseSet> {
    let mut positive: Vec<(f64, f64)> = Vec::new();
    let mut boundary = Vec::new();
    for line in spectral_lines(real)? {
        let p = line.phase;
        if p.abs() <= BOUNDARY_PHASE_TOL || (PI - p.abs()) <= BOUNDARY_PHASE_TOL {
            boundary.push(p.abs());
        } else if p > 0.0 {
            positive.push((p, line.weight));
        }
    }
    positive.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(PhaseSet {
        positive: positive.iter().map(|p| p.0).collect(),
        weights: positive.iter().map(|p| p.1).collect(),
        boundary,
    })
}

/// Line spectrum of the realization output: one `(phase, weight)` per
/// eigenvalue of `A`, with `P = state_variance · I`. Weights sum to
/// `state_variance · ‖c‖²`.
pub fn discrete_spectrum(
    real: &RotationRealization,
    state_variance: f64,
) -> Result<Vec<SpectralLine>> {
    let mut lines = spectral_lines(real)?;
    for l in &mut lines {
        l.weight *= state_variance;
    }
    lines.sort_by(|x, y| x.phase.total_cmp(&y.phase));
    Ok(lines)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Split sorted phases at the `ν − 1` widest gaps, then refine by
    /// nearest-mean reassignment.
    #[default]
    LargestGap,
    /// Lloyd iterations from evenly spaced order statistics.
    Lloyd,
}

/// Partition of sorted phases into `ν` contiguous clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseClusters {
    pub phases: Vec<f64>,
    /// Cluster label per phase, nondecreasing.
    pub assignment: Vec<usize>,
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
}

fn labels_from_cuts(len: usize, cuts: &[usize]) -> Vec<usize> {
    // cuts are sorted start indices of clusters 1..ν
    let mut labels = Vec::with_capacity(len);
    let mut label = 0;
    for i in 0..len {
        while label < cuts.len() && i >= cuts[label] {
            label += 1;
        }
        labels.push(label);
    }
    labels
}

fn cluster_means(phases: &[f64], labels: &[usize], nu: usize) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; nu];
    let mut counts = vec![0usize; nu];
    for (&p, &l) in phases.iter().zip(labels) {
        sums[l] += p;
        counts[l] += 1;
    }
    let centers = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    (centers, counts)
}

/// Nearest-center relabelling; in 1-D with sorted centers it keeps clusters
/// contiguous. Returns `None` if a cluster would empty out.
fn reassign(phases: &[f64], centers: &[f64]) -> Option<Vec<usize>> {
    let labels: Vec<usize> = phases
        .iter()
        .map(|&p| {
            let mut best = 0;
            for (j, &c) in centers.iter().enumerate() {
                if (p - c).abs() < (p - centers[best]).abs() {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut seen = vec![false; centers.len()];
    labels.iter().for_each(|&l| seen[l] = true);
    seen.into_iter().all(|s| s).then_some(labels)
}

fn refine(phases: &[f64], mut labels: Vec<usize>, nu: usize) -> Vec<usize> {
    for _ in 0..100 {
        let (centers, _) = cluster_means(phases, &labels, nu);
        match reassign(phases, &centers) {
            Some(next) if next != labels => labels = next,
            _ => break,
        }
    }
    labels
}

/// Groups phases into `ν` clusters and averages each cluster.
pub fn cluster_phases(phases: &[f64], nu: usize, method: ClusterMethod) -> Result<PhaseClusters> {
    if nu == 0 {
        return Err(Error::InvalidArgument("ν must be >= 1".into()));
    }
    if phases.len() < nu {
        return Err(Error::InsufficientSpectralContent {
            found: phases.len(),
            wanted: nu,
        });
    }
    let mut sorted = phases.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len();
    let labels = match method {
        ClusterMethod::LargestGap => {
            let mut gaps: Vec<(usize, f64)> =
                sorted.windows(2).enumerate().map(|(i, w)| (i + 1, w[1] - w[0])).collect();
            // widest first, earlier index on ties
            gaps.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let mut cuts: Vec<usize> = gaps.iter().take(nu - 1).map(|g| g.0).collect();
            cuts.sort_unstable();
            refine(&sorted, labels_from_cuts(len, &cuts), nu)
        }
        ClusterMethod::Lloyd => {
            let cuts: Vec<usize> = (1..nu).map(|j| j * len / nu).collect();
            refine(&sorted, labels_from_cuts(len, &cuts), nu)
        }
    };
    let (centers, counts) = cluster_means(&sorted, &labels, nu);
    Ok(PhaseClusters {
        phases: sorted,
        assignment: labels,
        centers,
        counts,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubspaceOptions {
    #[serde(default)]
    pub cov: CovOptions,
    /// Procrustes shift depth `k`; `None` means `N − 1`.
    #[serde(default)]
    pub shift_depth: Option<usize>,
    #[serde(default)]
    pub cluster: ClusterMethod,
}

/// Output of the subspace stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceEstimate {
    pub theta_hat: Vec<f64>,
    #[serde(rename = "W_hat")]
    pub w_hat: f64,
    pub rank_hat: usize,
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
    pub cluster_labels: Vec<usize>,
    pub boundary_phases: Vec<f64>,
    pub flags: Vec<Flag>,
}

/// Runs the subspace stage on a covariance estimate.
pub fn estimate_centers_from_cov(
    cov: &CovEstimate,
    nu: usize,
    opts: &SubspaceOptions,
) -> Result<SubspaceEstimate> {
    let slice = truncate_eigenvectors(&cov.eigen, cov.rank_hat)?;
    let real = solve_orthogonal_procrustes(&slice.h, opts.shift_depth)?;
    let mut flags = cov.flags.clone();
    if real.degenerate {
        raise(&mut flags, Flag::DegenerateProcrustes);
    }
    let phase_set = phase_angles(&real)?;
    if !phase_set.boundary.is_empty() {
        raise(&mut flags, Flag::RealEigenvaluesDropped);
    }
    let clusters = cluster_phases(&phase_set.positive, nu, opts.cluster)?;
    let w = cov.w_hat;
    let stray = clusters
        .phases
        .iter()
        .any(|&p| !clusters.centers.iter().any(|&c| (p - c).abs() <= w));
    if stray {
        raise(&mut flags, Flag::StrayPhases);
    }
    Ok(SubspaceEstimate {
        theta_hat: clusters.centers,
        w_hat: w,
        rank_hat: cov.rank_hat,
        phases: clusters.phases,
        weights: phase_set.weights,
        cluster_labels: clusters.assignment,
        boundary_phases: phase_set.boundary,
        flags,
    })
}

/// Full subspace pipeline from a raw panel: covariance estimate, rank and
/// bandwidth, eigen-truncation, Procrustes, phases, clustering.
pub fn estimate_centers(
    panel: &SnapshotPanel,
    nu: usize,
    opts: &SubspaceOptions,
) -> Result<(SubspaceEstimate, CovEstimate)> {
    let cov = estimate_cov(panel, nu, &opts.cov)?;
    let est = estimate_centers_from_cov(&cov, nu, opts)?;
    Ok((est, cov))
}
