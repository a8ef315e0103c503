//! Reference solver for the L2-constrained problem that does not use the
//! closed-form weight update: it minimizes `F(μ) = yᵀ(K(μ) + λI)⁻¹y`, the
//! inner maximum of the dual, directly over the feasible set.

use nalgebra::{DMatrix, DVector};

use super::projection::{project_ball_orthant, projected_gradient};
use super::{check_anchor, solve_shifted, DualVector, MuWeights};
use crate::error::{Error, Result};
use crate::kernels::{combine_into, KernelFamily};

/// Outer iteration cap for [`oracle_fit`].
pub const ORACLE_MAX_ITERATIONS: usize = 200_000;

#[derive(Clone, Debug)]
pub struct OracleFit {
    pub weights: MuWeights,
    pub alpha: DualVector,
    /// `F(μ)` at the returned weights.
    pub objective: f64,
    pub iterations: usize,
}

/// `F(μ) = max_α −λαᵀα − αᵀK(μ)α + 2αᵀy = yᵀα(μ)`, with its maximizer.
pub fn dual_value(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda: f64,
    mu: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let m = family.m();
    let mut k = DMatrix::zeros(m, m);
    combine_into(family, mu, &mut k);
    let alpha = solve_shifted(&k, y, lambda)?;
    Ok((y.dot(&alpha), alpha))
}

/// Value and gradient of `F`; `∂F/∂μ_k = −α(μ)ᵀ K_k α(μ)`.
pub(crate) fn value_and_gradient(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda: f64,
    mu: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let (value, alpha) = dual_value(family, y, lambda, mu)?;
    let grad = DVector::from_iterator(
        family.len(),
        family.grams().iter().map(|g| -g.quad_form(&alpha)),
    );
    Ok((value, grad))
}

/// `gᵀμ − min over the ball of gᵀz`. The ball contains the feasible set,
/// so this bounds the Frank-Wolfe gap, and hence `F(μ) − min F`, from above.
pub(crate) fn ball_gap(grad: &DVector<f64>, mu: &DVector<f64>, mu0: &DVector<f64>, radius: f64) -> f64 {
    grad.dot(mu) - grad.dot(mu0) + radius * grad.norm()
}

/// Projected gradient descent on `μ` over `{μ ≥ 0, ‖μ − μ0‖ ≤ Λ}`.
pub fn oracle_fit(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda0: f64,
    radius: f64,
    mu0: &DVector<f64>,
    tol: f64,
) -> Result<OracleFit> {
    let m = family.m();
    if y.len() != m || mu0.len() != family.len() {
        return Err(Error::Shape("oracle arguments disagree in length".into()));
    }
    check_anchor(mu0)?;
    if !(lambda0 > 0.0) || !(radius >= 0.0) || !(tol > 0.0) {
        return Err(Error::Domain("oracle requires λ0 > 0, Λ ≥ 0 and tol > 0".into()));
    }
    let lambda = lambda0 * m as f64;

    let (point, iterations) = if radius == 0.0 {
        (mu0.clone(), 0)
    } else {
        let outcome = projected_gradient(
            mu0.clone(),
            |mu| value_and_gradient(family, y, lambda, mu),
            |z| project_ball_orthant(z, mu0, radius),
            |mu, g| ball_gap(g, mu, mu0, radius),
            tol,
            ORACLE_MAX_ITERATIONS,
        )?;
        if !outcome.converged {
            return Err(Error::Oracle(format!(
                "projected gradient did not converge in {} iterations",
                outcome.iterations
            )));
        }
        (outcome.point, outcome.iterations)
    };
    let (objective, alpha) = dual_value(family, y, lambda, &point)?;
    Ok(OracleFit {
        weights: MuWeights::new(point, mu0.clone(), radius)?,
        alpha: DualVector(alpha),
        objective,
        iterations,
    })
}
