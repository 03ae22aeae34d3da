//! MAP refinement of the frequency vector inside the estimated prior boxes.
//!
//! With a uniform prior on `[θ̂_ℓ − Ŵ, θ̂_ℓ + Ŵ]` the MAP estimate minimizes
//! `‖y − V(ω)u‖²` over the box. Starting from `θ̂`, each iteration linearizes
//! `V(ω)û` around the current iterate and solves a box-constrained (optionally
//! ridge-penalized) linear least-squares problem in the offset `ω̃ = ω − θ̂`.
//! Several snapshots share `ω` and contribute their squared residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diag::{raise, Flag};
use crate::error::{Error, Result};

/// Frequencies closer than this are treated as duplicates.
const DUPLICATE_TOL: f64 = 1e-12;
/// Design condition number above which the design is flagged near-degenerate.
const NEAR_DEGENERATE_COND: f64 = 1e6;
/// Condition number of `VᵀV` above which the normal equations are singular.
const SINGULAR_COND: f64 = 1e14;
/// Condition number of `MᵀM` above which a ridge term is added automatically.
const RIDGE_BUMP_COND: f64 = 1e12;
const KKT_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;
const MAX_HALVINGS: usize = 40;

/// `V(ω) = [C(ω) S(ω)]` with `C[t−1, ℓ] = cos(ω_ℓ t)`, `S[t−1, ℓ] = sin(ω_ℓ t)`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub v: DMatrix<f64>,
    pub omega: Vec<f64>,
    /// Condition number of `V` exceeds `1e6`.
    pub near_degenerate: bool,
}

impl DesignMatrix {
    pub fn nu(&self) -> usize {
        self.omega.len()
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn design_unchecked(omega: &[f64], n: usize) -> DMatrix<f64> {
    let nu = omega.len();
    DMatrix::from_fn(n, 2 * nu, |r, c| {
        let t = (r + 1) as f64;
        if c < nu {
            (omega[c] * t).cos()
        } else {
            (omega[c - nu] * t).sin()
        }
    })
}

pub fn build_design(omega: &[f64], n: usize) -> Result<DesignMatrix> {
    if omega.is_empty() || n == 0 {
        return Err(Error::InvalidDimension(format!("ν={} N={n}", omega.len())));
    }
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("non-finite frequency".into()));
    }
    for i in 0..omega.len() {
        for j in i + 1..omega.len() {
            if (omega[i] - omega[j]).abs() < DUPLICATE_TOL {
                return Err(Error::RankDeficient(format!(
                    "duplicate frequencies ω{i} = ω{j} = {}",
                    omega[i]
                )));
            }
        }
    }
    let v = design_unchecked(omega, n);
    let near_degenerate = 2 * omega.len() > n || condition_number(&v) > NEAR_DEGENERATE_COND;
    Ok(DesignMatrix {
        v,
        omega: omega.to_vec(),
        near_degenerate,
    })
}

/// Least-squares amplitudes `(VᵀV)⁻¹Vᵀy`, one column per snapshot column of
/// `y` (`N × L`). Rows are the cosine block followed by the sine block.
pub fn amplitude_ls(design: &DesignMatrix, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let v = &design.v;
    if y.nrows() != v.nrows() {
        return Err(Error::InvalidDimension(format!(
            "observations have {} rows, design has {}",
            y.nrows(),
            v.nrows()
        )));
    }
    let gram = v.transpose() * v;
    let condition = condition_number(&gram);
    if !(condition <= SINGULAR_COND) {
        return Err(Error::SingularNormalEquations { condition });
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::SingularNormalEquations { condition })?;
    Ok(chol.solve(&(v.transpose() * y)))
}

/// `M(θ)` with column `ℓ = D_N (−s_ℓ(θ_ℓ) a_ℓ + c_ℓ(θ_ℓ) b_ℓ)`, the Jacobian of
/// `V(θ)u` with respect to `θ`. `u` holds `[a; b]`.
pub fn gradient_matrix(theta: &[f64], u: &[f64], n: usize) -> Result<DMatrix<f64>> {
    let nu = theta.len();
    if u.len() != 2 * nu {
        return Err(Error::InvalidDimension(format!(
            "amplitude vector has {} entries, expected {}",
            u.len(),
            2 * nu
        )));
    }
    Ok(DMatrix::from_fn(n, nu, |r, l| {
        let t = (r + 1) as f64;
        let (s, c) = (theta[l] * t).sin_cos();
        t * (-s * u[l] + c * u[nu + l])
    }))
}

/// Gradient matrices of every snapshot stacked vertically, `(N·L) × ν`.
fn stacked_gradient(theta: &[f64], u: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let l = u.ncols();
    let mut m = DMatrix::zeros(n * l, theta.len());
    for k in 0..l {
        let col: Vec<f64> = u.column(k).iter().copied().collect();
        m.rows_mut(k * n, n).copy_from(&gradient_matrix(theta, &col, n)?);
    }
    Ok(m)
}

/// Replaces every `N`-row block `M_k` by `(I − V V⁺) M_k`.
fn project_out_design(m: &mut DMatrix<f64>, v: &DMatrix<f64>, blocks: usize) -> Result<()> {
    let n = v.nrows();
    let gram = v.transpose() * v;
    let condition = condition_number(&gram);
    let chol = gram
        .cholesky()
        .ok_or(Error::SingularNormalEquations { condition })?;
    for k in 0..blocks {
        let block = m.rows(k * n, n).into_owned();
        let coef = chol.solve(&(v.transpose() * &block));
        m.rows_mut(k * n, n).copy_from(&(block - v * coef));
    }
    Ok(())
}

fn stack_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Minimizes `‖r − M z‖² + λ‖z‖²` subject to `|z_ℓ| ≤ w` by projected
/// coordinate descent, to a KKT residual of `1e−12`. Exact in one dimension.
pub fn box_projected_ls(m: &DMatrix<f64>, r: &DVector<f64>, w: f64, lambda: f64) -> DVector<f64> {
    let p = m.ncols();
    let q = m.transpose() * m + DMatrix::identity(p, p) * lambda;
    let g = m.transpose() * r;
    box_qp(&q, &g, w)
}

/// `argmin ½zᵀQz − gᵀz` over the box `[−w, w]^p`, `Q` symmetric PSD.
fn box_qp(q: &DMatrix<f64>, g: &DVector<f64>, w: f64) -> DVector<f64> {
    let p = g.len();
    let clamp = |x: f64| x.clamp(-w, w);
    // coordinate with no curvature: move to the box edge the gradient favors
    let coord = |i: usize, z: &DVector<f64>| -> f64 {
        let rest = g[i] - (q.row(i) * z)[0] + q[(i, i)] * z[i];
        if q[(i, i)] > 0.0 {
            clamp(rest / q[(i, i)])
        } else if rest > 0.0 {
            w
        } else if rest < 0.0 {
            -w
        } else {
            z[i]
        }
    };
    let mut z = match q.clone().cholesky() {
        Some(ch) => ch.solve(g).map(clamp),
        None => DVector::zeros(p),
    };
    if z.iter().all(|x| x.abs() < w) && q.clone().cholesky().is_some() {
        return z;
    }
    for _ in 0..MAX_SWEEPS {
        let mut moved: f64 = 0.0;
        for i in 0..p {
            let next = coord(i, &z);
            moved = moved.max((next - z[i]).abs());
            z[i] = next;
        }
        if moved <= KKT_TOL {
            break;
        }
    }
    z
}

/// Ridge weights `λ(k)` for iteration `k = 0, 1, …`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RidgeSchedule {
    #[default]
    None,
    Constant { lambda: f64 },
    /// `λ(k) = λ₀/(k+1)`; `λ₀ = 1e−2‖MᵀM‖₂` at the first iterate when absent.
    Harmonic { lambda0: Option<f64> },
}

#[derive(Debug, Clone)]
pub struct MapProblem {
    /// Observations, one snapshot per column (`N × L`).
    pub y: DMatrix<f64>,
    pub theta0: Vec<f64>,
    pub w: f64,
    pub ridge: RidgeSchedule,
    pub tol: f64,
    pub max_iters: usize,
    /// Estimate `û` once at `θ̂` and keep it fixed.
    pub freeze_amplitudes: bool,
}

impl MapProblem {
    /// Single-path or multi-snapshot problem with default settings.
    pub fn new(y: DMatrix<f64>, theta0: Vec<f64>, w: f64) -> Self {
        Self {
            y,
            theta0,
            w,
            ridge: RidgeSchedule::None,
            tol: 1e-8,
            max_iters: 100,
            freeze_amplitudes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need W > 0 and tol > 0, got W={} tol={}",
                self.w, self.tol
            )));
        }
        if self.theta0.is_empty() || self.y.nrows() == 0 || self.y.ncols() == 0 {
            return Err(Error::InvalidDimension("empty MAP problem".into()));
        }
        match self.ridge {
            RidgeSchedule::Constant { lambda } if !(lambda >= 0.0) => {
                Err(Error::InvalidArgument(format!("ridge weight {lambda} < 0")))
            }
            RidgeSchedule::Harmonic { lambda0: Some(l) } if !(l >= 0.0) => {
                Err(Error::InvalidArgument(format!("ridge weight {l} < 0")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub omega_map: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ_k ‖y_k − V(ω)û_k‖²` at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub flags: Vec<Flag>,
}

fn residual_norm2(y: &DMatrix<f64>, v: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    (y - v * u).norm_squared()
}

struct Evaluation {
    u: DMatrix<f64>,
    objective: f64,
}

fn evaluate(problem: &MapProblem, omega: &[f64], frozen: Option<&DMatrix<f64>>) -> Result<Evaluation> {
    let design = build_design(omega, problem.y.nrows())?;
    let u = match frozen {
        Some(u) => u.clone(),
        None => amplitude_ls(&design, &problem.y)?,
    };
    let objective = residual_norm2(&problem.y, &design.v, &u);
    Ok(Evaluation { u, objective })
}

/// Iterated box-constrained Gauss-Newton. Every iterate stays inside
/// `[θ̂_ℓ − Ŵ, θ̂_ℓ + Ŵ]` and the objective never increases across accepted
/// steps; a candidate that does not decrease it is halved towards the
/// current iterate before being rejected.
///
/// When `û` is re-estimated at every iterate the linearization uses
/// `(I − V V⁺) M`, the Jacobian of the residual with `û(ω)` eliminated
/// (exact at zero residual); with frozen amplitudes it uses `M` itself.
pub fn map_refine(problem: &MapProblem) -> Result<MapResult> {
    problem.validate()?;
    let n = problem.y.nrows();
    let theta0 = &problem.theta0;
    let mut flags = Vec::new();
    let mut omega = theta0.clone();
    let mut current = evaluate(problem, &omega, None)?;
    let frozen = problem.freeze_amplitudes.then(|| current.u.clone());
    let mut trace = vec![current.objective];
    let mut converged = false;
    let mut iterations = 0;
    let mut lambda0 = None;

    for k in 0..problem.max_iters {
        iterations = k + 1;
        let u = frozen.as_ref().unwrap_or(&current.u);
        let design = build_design(&omega, n)?;
        let mut m = stacked_gradient(&omega, u, n)?;
        if frozen.is_none() {
            // û(ω) moves with ω: drop the part of M that û absorbs
            project_out_design(&mut m, &design.v, problem.y.ncols())?;
        }
        let offset = DVector::from_iterator(omega.len(), omega.iter().zip(theta0).map(|(w, t)| w - t));
        // Taylor expansion at ω(k), written in the offset from θ̂
        let rhs = stack_columns(&(&problem.y - &design.v * u)) + &m * &offset;
        let mtm = m.transpose() * &m;
        let mut lambda = match problem.ridge {
            RidgeSchedule::None => 0.0,
            RidgeSchedule::Constant { lambda } => lambda,
            RidgeSchedule::Harmonic { lambda0: l } => {
                let l0 = *lambda0.get_or_insert_with(|| l.unwrap_or(1e-2 * mtm.norm()));
                l0 / (k + 1) as f64
            }
        };
        let scale = mtm.diagonal().max();
        if lambda == 0.0 && !(condition_number(&mtm) <= RIDGE_BUMP_COND) {
            lambda = scale.max(f64::MIN_POSITIVE) * 1e-10;
            raise(&mut flags, Flag::RidgeBump);
        }
        let z = box_projected_ls(&m, &rhs, problem.w, lambda);
        let target: Vec<f64> = theta0.iter().zip(z.iter()).map(|(t, d)| t + d).collect();

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = omega
                .iter()
                .zip(&target)
                .map(|(w, t)| w + alpha * (t - w))
                .collect();
            if let Ok(eval) = evaluate(problem, &cand, frozen.as_ref()) {
                if eval.objective <= current.objective {
                    accepted = Some((cand, eval));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((next, eval)) = accepted else {
            raise(&mut flags, Flag::StepRejected);
            converged = true;
            break;
        };
        let step = next
            .iter()
            .zip(&omega)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        omega = next;
        current = eval;
        trace.push(current.objective);
        if step < problem.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        raise(&mut flags, Flag::NotConverged);
    }
    // guard against rounding in θ̂ + z
    for (w, t) in omega.iter_mut().zip(theta0) {
        *w = w.clamp(t - problem.w, t + problem.w);
    }
    Ok(MapResult {
        omega_map: omega,
        iterations,
        converged,
        objective_trace: trace,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn quarter_period_design() {
        let d = build_design(&[PI / 2.0], 4).unwrap();
        let c: Vec<f64> = d.v.column(0).iter().map(|x| x.round()).collect();
        let s: Vec<f64> = d.v.column(1).iter().map(|x| x.round()).collect();
        assert_eq!(c, vec![0.0, -1.0, 0.0, 1.0]);
        assert_eq!(s, vec![1.0, 0.0, -1.0, 0.0]);
        assert!(!d.near_degenerate);
    }

    #[test]
    fn design_rank_and_duplicates() {
        let d = build_design(&[0.7, 1.9], 100).unwrap();
        let sv = d.v.singular_values();
        assert_eq!(sv.iter().filter(|&&s| s > 1e-8 * sv.max()).count(), 4);
        assert!(matches!(build_design(&[0.7, 0.7], 100), Err(Error::RankDeficient(_))));
        assert!(build_design(&[1e-9], 50).unwrap().near_degenerate);
    }

    #[test]
    fn consistent_system_recovers_amplitudes() {
        let d = build_design(&[0.4, 1.3], 60).unwrap();
        let u = DMatrix::from_column_slice(4, 2, &[1.0, -0.5, 0.25, 2.0, 0.0, 1.0, -1.0, 0.3]);
        let y = &d.v * &u;
        let est = amplitude_ls(&d, &y).unwrap();
        assert!((est - u).amax() < 1e-10);
    }

    #[test]
    fn orthogonal_observation_gives_zero() {
        let d = build_design(&[PI / 2.0], 4).unwrap();
        // orthogonal to both quarter-period columns
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert!(amplitude_ls(&d, &y).unwrap().amax() < 1e-14);
    }

    #[test]
    fn singular_normal_equations_reported() {
        let d = DesignMatrix {
            v: design_unchecked(&[0.0], 10),
            omega: vec![0.0],
            near_degenerate: true,
        };
        let y = DMatrix::from_element(10, 1, 1.0);
        assert!(matches!(amplitude_ls(&d, &y), Err(Error::SingularNormalEquations { .. })));
    }

    #[test]
    fn single_frequency_gradient() {
        let m = gradient_matrix(&[0.3], &[1.0, 0.0], 5).unwrap();
        for t in 1..=5 {
            let tf = t as f64;
            assert!((m[(t - 1, 0)] + tf * (0.3 * tf).sin()).abs() < 1e-15);
        }
        assert_eq!(gradient_matrix(&[0.3, 1.0], &[0.0; 4], 7).unwrap().amax(), 0.0);
        assert!(gradient_matrix(&[0.3], &[1.0], 5).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(10..200);
            let theta = [rng.random_range(0.1..1.4), rng.random_range(1.6..3.0)];
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = gradient_matrix(&theta, &u, n).unwrap();
            let uv = DVector::from_vec(u.clone());
            let h = 1e-6;
            for l in 0..2 {
                let mut tp = theta;
                let mut tm = theta;
                tp[l] += h;
                tm[l] -= h;
                let fd = (design_unchecked(&tp, n) * &uv - design_unchecked(&tm, n) * &uv) / (2.0 * h);
                let err = (fd - m.column(l)).norm() / m.column(l).norm();
                assert!(err < 1e-4, "relative error {err}");
            }
        }
    }

    #[test]
    fn interior_minimizer_is_unconstrained_solution() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let r = DVector::from_vec(vec![0.1, -0.05, 0.02]);
        let z = box_projected_ls(&m, &r, 1.0, 0.0);
        let free = (m.transpose() * &m).cholesky().unwrap().solve(&(m.transpose() * &r));
        assert!((z - free).amax() < 1e-14);
    }

    #[test]
    fn one_dimensional_clamp() {
        let m = DMatrix::from_element(4, 1, 1.0);
        let r = DVector::from_element(4, 0.3);
        let z = box_projected_ls(&m, &r, 0.1, 0.0);
        assert_eq!(z[0], 0.1);
        let z = box_projected_ls(&m, &(-r), 0.1, 0.0);
        assert_eq!(z[0], -0.1);
    }

    #[test]
    fn ridge_shrinks_towards_zero() {
        let m = DMatrix::from_element(4, 1, 1.0);
        let r = DVector::from_element(4, 0.01);
        let z0 = box_projected_ls(&m, &r, 1.0, 0.0)[0];
        let z1 = box_projected_ls(&m, &r, 1.0, 4.0)[0];
        assert!((z0 - 0.01).abs() < 1e-15);
        assert!((z1 - 0.005).abs() < 1e-15);
    }

    #[test]
    fn box_solution_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
            let r = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let w = 0.5;
            let obj = |z: &DVector<f64>| (&r - &m * z).norm_squared();
            let best = obj(&box_projected_ls(&m, &r, w, 0.0));
            for _ in 0..10_000 {
                let z = DVector::from_fn(2, |_, _| rng.random_range(-w..=w));
                assert!(best <= obj(&z) + 1e-12);
            }
        }
    }

    #[test]
    fn exact_start_stays_put() {
        let omega = [0.9];
        let d = build_design(&omega, 80).unwrap();
        let y = &d.v * DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let res = map_refine(&MapProblem::new(y, omega.to_vec(), 0.05)).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        assert!((res.omega_map[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn noiseless_offset_recovered() {
        let n = 100;
        let w = 0.02;
        let truth = [1.0 + 0.4 * w, 2.2 - 0.3 * w];
        let d = build_design(&truth, n).unwrap();
        let y = &d.v * DMatrix::from_column_slice(4, 1, &[1.0, -0.7, 0.4, 0.9]);
        let res = map_refine(&MapProblem::new(y.clone(), vec![1.0, 2.2], w)).unwrap();
        assert!(res.converged, "{res:?}");
        for (a, b) in res.omega_map.iter().zip(truth) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(res.objective_trace.windows(2).all(|p| p[1] <= p[0]));
        assert!(res.objective_trace.last().unwrap().sqrt() <= 1e-8 * y.norm());
    }

    #[test]
    fn iterates_stay_in_box() {
        let n = 100;
        let truth = [1.3];
        let d = build_design(&truth, n).unwrap();
        let y = &d.v * DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let res = map_refine(&MapProblem::new(y, vec![1.25], 0.02)).unwrap();
        assert!(res.omega_map[0] <= 1.25 + 0.02);
        assert!(res.omega_map[0] >= 1.25 - 0.02);
    }

    #[test]
    fn harmonic_ridge_and_frozen_amplitudes() {
        let n = 100;
        let truth = [0.8 + 0.005];
        let d = build_design(&truth, n).unwrap();
        let y = &d.v * DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let mut p = MapProblem::new(y, vec![0.8], 0.02);
        p.ridge = RidgeSchedule::Harmonic { lambda0: None };
        let res = map_refine(&p).unwrap();
        assert!((res.omega_map[0] - truth[0]).abs() < 1e-6);
        p.freeze_amplitudes = true;
        let frozen = map_refine(&p).unwrap();
        assert!(frozen.objective_trace.windows(2).all(|q| q[1] <= q[0]));
        assert!((frozen.omega_map[0] - 0.8).abs() <= 0.02);
    }

    #[test]
    fn rejects_bad_problem() {
        let y = DMatrix::from_element(10, 1, 1.0);
        assert!(map_refine(&MapProblem::new(y.clone(), vec![1.0], 0.0)).is_err());
        let mut p = MapProblem::new(y, vec![1.0], 0.1);
        p.ridge = RidgeSchedule::Constant { lambda: -1.0 };
        assert!(map_refine(&p).is_err());
    }
}
