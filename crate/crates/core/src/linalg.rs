//! Symmetric Toeplitz matrices and sorted symmetric eigen-decompositions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the positive-semidefinite check, scaled by `K(0)`.
pub const PSD_REL_TOL: f64 = 1e-8;

/// Symmetric Toeplitz matrix stored as its first column `[K(0), ..., K(N-1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzCovariance {
    pub first_column: Vec<f64>,
}

impl ToeplitzCovariance {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        if first_column.is_empty() {
            return Err(Error::InvalidDimension("empty first column".into()));
        }
        Ok(Self { first_column })
    }

    pub fn dim(&self) -> usize {
        self.first_column.len()
    }

    /// Value at lag `tau`; negative lags use symmetry.
    pub fn lag(&self, tau: isize) -> f64 {
        self.first_column[tau.unsigned_abs()]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.first_column[i.abs_diff(j)])
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut first_column = self.first_column.clone();
        first_column[0] += shift;
        Self { first_column }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            first_column: self.first_column.iter().map(|v| v * factor).collect(),
        }
    }

    /// `K(0) >= |K(tau)|` for every lag.
    pub fn is_dominated_by_variance(&self) -> bool {
        let k0 = self.first_column[0];
        self.first_column
            .iter()
            .all(|v| v.abs() <= k0 + PSD_REL_TOL * k0.abs())
    }

    /// Smallest eigenvalue is above `-PSD_REL_TOL * K(0)`.
    pub fn is_psd(&self) -> bool {
        let values = symmetric_eigenvalues(&self.to_matrix());
        let floor = -PSD_REL_TOL * self.first_column[0].abs().max(f64::MIN_POSITIVE);
        values.last().map_or(true, |&min| min >= floor)
    }

    pub fn eigen(&self) -> EigenSystem {
        EigenSystem::from_symmetric(&self.to_matrix())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(&self.to_matrix())
    }
}

/// Eigen-decomposition of a real symmetric matrix with eigenvalues in
/// nonincreasing order and matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// Ties keep the solver's original column order.
    pub fn from_symmetric(matrix: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(matrix.clone());
        let order = descending_order(eig.eigenvalues.as_slice());
        let n = matrix.nrows();
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    /// Eigensystem of the identity, handy as a degenerate fixture.
    pub fn identity(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            vectors: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }

    /// Largest deviation of `QᵀQ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.dim();
        let gram = self.vectors.transpose() * &self.vectors;
        (gram - DMatrix::<f64>::identity(n, n)).amax()
    }
}

/// Eigenvalues only, sorted nonincreasing.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let values = matrix.clone().symmetric_eigenvalues();
    let order = descending_order(values.as_slice());
    order.into_iter().map(|i| values[i]).collect()
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps index order on ties
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}
