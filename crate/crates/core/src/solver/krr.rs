use nalgebra::{DMatrix, DVector};

use super::DualVector;
use crate::error::{Error, Result};
use crate::kernels::{eigen_extremes, GramMatrix};

/// Solves `(K + λI) α = y` by Cholesky factorization.
pub fn solve_shifted(k: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let m = k.nrows();
    if k.ncols() != m || y.len() != m {
        return Err(Error::Shape(format!(
            "system of size {}x{} with right-hand side of length {}",
            m,
            k.ncols(),
            y.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("λ must be positive, got {lambda}")));
    }
    let mut a = k.clone();
    for i in 0..m {
        a[(i, i)] += lambda;
    }
    match a.cholesky() {
        Some(chol) => Ok(chol.solve(y)),
        None => Err(Error::Factorization {
            min_eigenvalue: eigen_extremes(k).0,
        }),
    }
}

/// Standard kernel ridge regression: `α = (K + λI)⁻¹ y`.
pub fn krr_solve(k: &GramMatrix, y: &DVector<f64>, lambda: f64) -> Result<DualVector> {
    solve_shifted(&k.to_dense(), y, lambda).map(DualVector)
}
