//! Kernel ridge regression with a fixed kernel, with an L2-constrained learned
//! kernel, and with an L1-constrained learned kernel.

mod krr;
mod l1;
mod lkrr;
mod oracle;
pub(crate) mod projection;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cross_kernel, KernelSpec};

pub use krr::{krr_solve, solve_shifted};
pub use l1::{frank_wolfe_gap, l1_fit, L1Fit, L1Options, L1Scaling};
pub use lkrr::{
    compute_v, default_epsilon, lkrr_fit, objective, update_mu, LkrrOptions, DEGENERATE_V_SCALE,
    V_CLAMP_TOLERANCE,
};
pub use oracle::{dual_value, oracle_fit, OracleFit, ORACLE_MAX_ITERATIONS};

/// Kernel weights `μ` together with the anchor `μ0` and radius `Λ` of the
/// feasible set `{μ ≥ 0, ‖μ − μ0‖ ≤ Λ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuWeights {
    pub mu: DVector<f64>,
    pub mu0: DVector<f64>,
    pub radius: f64,
}

impl MuWeights {
    pub fn new(mu: DVector<f64>, mu0: DVector<f64>, radius: f64) -> Result<Self> {
        if mu.len() != mu0.len() {
            return Err(Error::Shape(format!(
                "weights of length {} with anchor of length {}",
                mu.len(),
                mu0.len()
            )));
        }
        check_anchor(&mu0)?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!("radius must be nonnegative, got {radius}")));
        }
        if mu.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Domain("kernel weights must be nonnegative".into()));
        }
        let dist = (&mu - &mu0).norm();
        if dist > radius + 1e-9 * radius.max(1.0) {
            return Err(Error::Domain(format!(
                "‖μ − μ0‖ = {dist} exceeds the radius {radius}"
            )));
        }
        Ok(MuWeights { mu, mu0, radius })
    }

    /// `μ = μ0` with radius `Λ`.
    pub fn at_anchor(mu0: DVector<f64>, radius: f64) -> Result<Self> {
        Self::new(mu0.clone(), mu0, radius)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `‖μ0‖ + Λ`, which bounds `‖μ‖` over the feasible set.
    pub fn norm_bound(&self) -> f64 {
        self.mu0.norm() + self.radius
    }
}

/// Requires a strictly positive anchor whose smallest component is one.
pub(crate) fn check_anchor(mu0: &DVector<f64>) -> Result<()> {
    if mu0.is_empty() {
        return Err(Error::Shape("empty anchor vector".into()));
    }
    if mu0.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Domain("anchor μ0 must be strictly positive".into()));
    }
    let min = mu0.iter().cloned().fold(f64::INFINITY, f64::min);
    if min != 1.0 {
        return Err(Error::Domain(format!(
            "anchor μ0 must have smallest component 1, got {min}"
        )));
    }
    Ok(())
}

/// Rescales a positive vector so its smallest component is one.
pub fn normalize_anchor(mu0: &DVector<f64>) -> Result<DVector<f64>> {
    let min = mu0.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0 && min.is_finite()) {
        return Err(Error::Domain("anchor μ0 must be strictly positive".into()));
    }
    Ok(mu0 / min)
}

/// Dual coefficients `α` of a kernel ridge regression hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVector(pub DVector<f64>);

impl DualVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A fitted learned-kernel ridge regression model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LkrrModel {
    pub mu: MuWeights,
    pub alpha: DualVector,
    /// `λ = λ0 · m`.
    pub lambda: f64,
    pub lambda0: f64,
    /// `v_k = αᵀ K_k α`.
    pub v: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖α′ − α‖` at exit.
    pub final_step: f64,
    /// Number of `v` entries clamped from tiny negatives to zero.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective_value: f64,
    /// Per-iteration `(‖α′ − α‖, objective)`.
    pub trajectory: Option<Vec<(f64, f64)>>,
}

/// `h(x) = Σ_i α_i Σ_k μ_k K_k(x_i, x)`.
pub fn predict(
    model: &LkrrModel,
    specs: &[KernelSpec],
    x_train: &DMatrix<f64>,
    x: &[f64],
) -> Result<f64> {
    let point = DMatrix::from_row_slice(1, x.len(), x);
    Ok(predict_batch(model, specs, x_train, &point)?[0])
}

/// Predictions for every row of `x_new`.
pub fn predict_batch(
    model: &LkrrModel,
    specs: &[KernelSpec],
    x_train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    predict_with(&model.mu.mu, &model.alpha, specs, x_train, x_new)
}

/// Predictions of the hypothesis `(μ, α)` at the rows of `x_new`.
pub fn predict_with(
    mu: &DVector<f64>,
    alpha: &DualVector,
    specs: &[KernelSpec],
    x_train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if alpha.len() != x_train.nrows() {
        return Err(Error::Shape(format!(
            "{} dual coefficients for {} training points",
            alpha.len(),
            x_train.nrows()
        )));
    }
    let cross = cross_kernel(specs, mu, x_train, x_new)?;
    Ok(cross * alpha.as_vector())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{combine, KernelFamily};

    fn model_with(mu: Vec<f64>, alpha: Vec<f64>) -> LkrrModel {
        let p = mu.len();
        LkrrModel {
            mu: MuWeights::at_anchor(DVector::from_vec(mu), 0.0).unwrap(),
            alpha: DualVector(DVector::from_vec(alpha)),
            lambda: 1.0,
            lambda0: 1.0,
            v: DVector::zeros(p),
            iterations: 0,
            converged: true,
            final_step: 0.0,
            clamped: 0,
        }
    }

    #[test]
    fn predict_examples() {
        let x_train = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let model = model_with(vec![1.0], vec![2.0]);
        let h = predict(&model, &[KernelSpec::Linear], &x_train, &[3.0, 0.0]).unwrap();
        assert_eq!(h, 6.0);

        let zero = model_with(vec![1.0], vec![0.0]);
        assert_eq!(predict(&zero, &[KernelSpec::Linear], &x_train, &[-4.0, 9.0]).unwrap(), 0.0);

        assert!(matches!(
            predict(&model, &[KernelSpec::Linear], &x_train, &[1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn predictions_on_training_points_match_gram_product() {
        let x = DMatrix::from_row_slice(
            4,
            2,
            &[0.5, 1.0, -1.0, 2.0, 0.0, -0.5, 1.5, 1.5],
        );
        let specs = vec![
            KernelSpec::Linear,
            KernelSpec::Gaussian { bandwidth: 0.8 },
            KernelSpec::ConstantOffset,
        ];
        let fam = KernelFamily::build(specs.clone(), &x).unwrap();
        let model = model_with(vec![1.0, 2.5, 1.25], vec![0.3, -1.2, 0.7, 2.0]);
        let k = combine(&fam, &model.mu.mu).unwrap().to_dense();
        let direct = &k * model.alpha.as_vector();
        let via_predict = predict_batch(&model, &specs, &x, &x).unwrap();
        assert!((direct - via_predict).amax() <= 1e-10);
    }

    #[test]
    fn mu_weights_invariants() {
        let mu0 = DVector::from_vec(vec![1.0, 2.0]);
        assert!(MuWeights::new(DVector::from_vec(vec![1.0, 5.0]), mu0.clone(), 3.0).is_ok());
        assert!(MuWeights::new(DVector::from_vec(vec![1.0, 6.0]), mu0.clone(), 3.0).is_err());
        assert!(MuWeights::new(DVector::from_vec(vec![-0.5, 2.0]), mu0, 3.0).is_err());
        assert!(MuWeights::at_anchor(DVector::from_vec(vec![2.0, 3.0]), 1.0).is_err());
        let norm = normalize_anchor(&DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(norm.as_slice(), &[1.0, 1.5]);
    }
}
