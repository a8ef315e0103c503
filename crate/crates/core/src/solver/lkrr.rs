//! The interpolated fixed-point iteration for the L2-constrained problem.
//!
//! At the optimum `μ = μ0 + Λ v/‖v‖` and `α = (K(μ) + λI)⁻¹ y`, where
//! `v_k = αᵀ K_k α`. The iteration alternates these two maps and damps the
//! `α` update by `η`.

use nalgebra::{DMatrix, DVector};

use super::{check_anchor, solve_shifted, DualVector, LkrrModel, MuWeights, SolveReport};
use crate::error::{Error, Result};
use crate::kernels::{combine_into, KernelFamily};

/// Entries of `v` in `[-V_CLAMP_TOLERANCE, 0)` are treated as roundoff.
pub const V_CLAMP_TOLERANCE: f64 = 1e-10;

/// `‖v‖ ≤ DEGENERATE_V_SCALE · p` leaves `μ` at the anchor.
pub const DEGENERATE_V_SCALE: f64 = 1e-14;

/// `v_k = αᵀ K_k α` for every base kernel, with the number of clamped entries.
pub fn compute_v(alpha: &DualVector, family: &KernelFamily) -> Result<(DVector<f64>, usize)> {
    if alpha.len() != family.m() {
        return Err(Error::Shape(format!(
            "{} dual coefficients for a sample of size {}",
            alpha.len(),
            family.m()
        )));
    }
    let mut clamped = 0;
    let mut v = DVector::zeros(family.len());
    for (k, g) in family.grams().iter().enumerate() {
        let q = g.quad_form(alpha.as_vector());
        if q < -V_CLAMP_TOLERANCE {
            return Err(Error::PsdViolation { index: k, value: q });
        }
        if q < 0.0 {
            clamped += 1;
            v[k] = 0.0;
        } else {
            v[k] = q;
        }
    }
    Ok((v, clamped))
}

fn euclidean_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `μ = μ0 + Λ v/‖v‖`, or `μ0` when `v` vanishes.
pub fn update_mu(v: &DVector<f64>, mu0: &DVector<f64>, radius: f64) -> Result<MuWeights> {
    if v.len() != mu0.len() {
        return Err(Error::Shape(format!(
            "v of length {} with anchor of length {}",
            v.len(),
            mu0.len()
        )));
    }
    if let Some((k, &value)) = v.iter().enumerate().find(|(_, &x)| x < -V_CLAMP_TOLERANCE) {
        return Err(Error::PsdViolation { index: k, value });
    }
    let norm = euclidean_norm(v);
    let mu = if norm <= DEGENERATE_V_SCALE * v.len() as f64 || radius == 0.0 {
        mu0.clone()
    } else {
        DVector::from_iterator(
            v.len(),
            mu0.iter().zip(v.iter()).map(|(a, &b)| a + radius * (b.max(0.0) / norm)),
        )
    };
    MuWeights::new(mu, mu0.clone(), radius)
}

/// `−λαᵀα + 2αᵀy − μ0ᵀv − Λ‖v‖`.
pub fn objective(
    alpha: &DualVector,
    y: &DVector<f64>,
    lambda: f64,
    v: &DVector<f64>,
    mu0: &DVector<f64>,
    radius: f64,
) -> Result<f64> {
    let a = alpha.as_vector();
    if a.len() != y.len() || v.len() != mu0.len() {
        return Err(Error::Shape("objective arguments disagree in length".into()));
    }
    Ok(-lambda * a.dot(a) + 2.0 * a.dot(y) - mu0.dot(v) - radius * euclidean_norm(v))
}

/// `1e-8 · (1 + ‖y‖)`.
pub fn default_epsilon(y: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + y.norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LkrrOptions {
    pub lambda0: f64,
    /// `Λ`.
    pub radius: f64,
    pub mu0: DVector<f64>,
    /// Interpolation weight on the previous iterate, in `(0, 1)`.
    pub eta: f64,
    /// Stop when `‖α′ − α‖ < ε`; `None` selects [`default_epsilon`].
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    pub record_trajectory: bool,
}

impl LkrrOptions {
    /// Defaults: `μ0 = 1`, `η = 1/2`, default `ε`, 200 iterations.
    pub fn new(p: usize, lambda0: f64, radius: f64) -> Self {
        LkrrOptions {
            lambda0,
            radius,
            mu0: DVector::from_element(p, 1.0),
            eta: 0.5,
            epsilon: None,
            max_iters: 200,
            record_trajectory: true,
        }
    }
}

/// Fits the L2-constrained learned kernel.
///
/// Returns the model and a report with the final objective. Hitting
/// `max_iters` is not an error: the model comes back with `converged = false`.
pub fn lkrr_fit(
    family: &KernelFamily,
    y: &DVector<f64>,
    opts: &LkrrOptions,
) -> Result<(LkrrModel, SolveReport)> {
    let m = family.m();
    let p = family.len();
    if y.len() != m {
        return Err(Error::Shape(format!("{} labels for {} points", y.len(), m)));
    }
    if opts.mu0.len() != p {
        return Err(Error::Shape(format!(
            "anchor of length {} for {} kernels",
            opts.mu0.len(),
            p
        )));
    }
    check_anchor(&opts.mu0)?;
    if !(opts.lambda0 > 0.0 && opts.lambda0.is_finite()) {
        return Err(Error::Domain(format!("λ0 must be positive, got {}", opts.lambda0)));
    }
    if !(opts.radius >= 0.0 && opts.radius.is_finite()) {
        return Err(Error::Domain(format!("Λ must be nonnegative, got {}", opts.radius)));
    }
    if !(opts.eta > 0.0 && opts.eta < 1.0) {
        return Err(Error::Domain(format!("η must lie in (0, 1), got {}", opts.eta)));
    }
    let epsilon = opts.epsilon.unwrap_or_else(|| default_epsilon(y));
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {epsilon}")));
    }
    let lambda = opts.lambda0 * m as f64;

    let mut k = DMatrix::zeros(m, m);
    combine_into(family, &opts.mu0, &mut k);
    let mut next = solve_shifted(&k, y, lambda)?;

    let mut trajectory = opts.record_trajectory.then(Vec::new);
    let mut iterations = 0;
    let mut step = f64::INFINITY;
    let mut converged = false;
    while iterations < opts.max_iters {
        let alpha = DualVector(next);
        let (v, _) = compute_v(&alpha, family)?;
        let mu = update_mu(&v, &opts.mu0, opts.radius)?;
        combine_into(family, &mu.mu, &mut k);
        let target = solve_shifted(&k, y, lambda)?;
        next = alpha.as_vector() * opts.eta + target * (1.0 - opts.eta);
        iterations += 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iterations });
        }
        step = (&next - alpha.as_vector()).norm();
        if let Some(t) = trajectory.as_mut() {
            let candidate = DualVector(next.clone());
            let (v_next, _) = compute_v(&candidate, family)?;
            t.push((
                step,
                objective(&candidate, y, lambda, &v_next, &opts.mu0, opts.radius)?,
            ));
        }
        if step < epsilon {
            converged = true;
            break;
        }
    }

    // The weights come from the last iterate; α is then the exact ridge
    // solution for those weights, so the model is plain KRR on K(μ).
    let (v_last, _) = compute_v(&DualVector(next), family)?;
    let mu = update_mu(&v_last, &opts.mu0, opts.radius)?;
    combine_into(family, &mu.mu, &mut k);
    let alpha = DualVector(solve_shifted(&k, y, lambda)?);
    let (v, clamped) = compute_v(&alpha, family)?;
    let objective_value = objective(&alpha, y, lambda, &v, &opts.mu0, opts.radius)?;
    let model = LkrrModel {
        mu,
        alpha,
        lambda,
        lambda0: opts.lambda0,
        v,
        iterations,
        converged,
        final_step: step,
        clamped,
    };
    Ok((
        model,
        SolveReport {
            objective_value,
            trajectory,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{combine, GramMatrix, KernelSpec, SampleId};
    use crate::solver::krr_solve;

    fn dense_family(mats: Vec<DMatrix<f64>>) -> KernelFamily {
        let sample = SampleId(3);
        let specs = vec![KernelSpec::Linear; mats.len()];
        let grams = mats
            .into_iter()
            .map(|k| GramMatrix::from_dense(k, sample).unwrap())
            .collect();
        KernelFamily::from_parts(specs, grams).unwrap()
    }

    fn sample_family() -> (KernelFamily, DVector<f64>) {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -0.2, 0.0, -0.2, 0.8, 0.4, 0.0, 0.4, 0.9]);
        (dense_family(vec![a, b]), DVector::from_vec(vec![1.0, -0.5, 2.0]))
    }

    #[test]
    fn compute_v_examples() {
        let (fam, _) = sample_family();
        let e1 = DualVector(DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let (v, clamped) = compute_v(&e1, &fam).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0]);
        assert_eq!(clamped, 0);
        let (v, _) = compute_v(&DualVector(DVector::zeros(3)), &fam).unwrap();
        assert_eq!(v, DVector::zeros(2));

        let id = dense_family(vec![DMatrix::identity(2, 2)]);
        let (v, _) = compute_v(&DualVector(DVector::from_vec(vec![1.0, 1.0])), &id).unwrap();
        assert_eq!(v[0], 2.0);
    }

    #[test]
    fn compute_v_clamps_roundoff_and_rejects_indefinite() {
        let tiny = dense_family(vec![DMatrix::from_element(1, 1, -1e-12)]);
        let (v, clamped) = compute_v(&DualVector(DVector::from_element(1, 1.0)), &tiny).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(clamped, 1);
        let bad = dense_family(vec![DMatrix::from_element(1, 1, -1.0)]);
        assert!(matches!(
            compute_v(&DualVector(DVector::from_element(1, 1.0)), &bad),
            Err(Error::PsdViolation { index: 0, .. })
        ));
    }

    #[test]
    fn update_mu_examples() {
        let mu0 = DVector::from_vec(vec![1.0, 1.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(update_mu(&v, &mu0, 0.0).unwrap().mu, mu0);
        assert_eq!(update_mu(&v, &mu0, 10.0).unwrap().mu.as_slice(), &[7.0, 9.0]);
        let mu0 = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(update_mu(&DVector::zeros(2), &mu0, 5.0).unwrap().mu, mu0);
        assert!(update_mu(&DVector::from_vec(vec![-1.0, 1.0]), &mu0, 1.0).is_err());
    }

    #[test]
    fn objective_examples() {
        let y = DVector::from_vec(vec![1.0]);
        let zero = DualVector(DVector::zeros(1));
        let one = DVector::from_vec(vec![1.0]);
        assert_eq!(objective(&zero, &y, 1.0, &DVector::zeros(1), &one, 0.0).unwrap(), 0.0);
        // K1 = [1], α = [0.5]: v = [0.25], value = -0.25 + 1 - 0.25.
        let half = DualVector(DVector::from_vec(vec![0.5]));
        let v = DVector::from_vec(vec![0.25]);
        assert_eq!(objective(&half, &y, 1.0, &v, &one, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn objective_with_zero_radius_is_krr_dual() {
        let (fam, y) = sample_family();
        let mu0 = DVector::from_vec(vec![1.0, 1.5]);
        let k0 = combine(&fam, &mu0).unwrap().to_dense();
        let alpha = DualVector(DVector::from_vec(vec![0.2, -0.7, 0.4]));
        let (v, _) = compute_v(&alpha, &fam).unwrap();
        let a = alpha.as_vector();
        let lambda = 0.9;
        let dual = -lambda * a.dot(a) - a.dot(&(&k0 * a)) + 2.0 * a.dot(&y);
        let value = objective(&alpha, &y, lambda, &v, &mu0, 0.0).unwrap();
        assert!((dual - value).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_reduces_to_krr() {
        let (fam, y) = sample_family();
        let opts = LkrrOptions::new(2, 0.3, 0.0);
        let (model, _) = lkrr_fit(&fam, &y, &opts).unwrap();
        let k0 = combine(&fam, &opts.mu0).unwrap();
        let krr = krr_solve(&k0, &y, 0.9).unwrap();
        assert!((model.alpha.0 - krr.0).amax() <= 1e-10);
        assert!(model.converged);
        assert!(model.iterations <= 2);
    }

    #[test]
    fn single_kernel_closed_form() {
        let (fam, y) = sample_family();
        let one = fam.single(0);
        let radius = 2.5;
        let mut opts = LkrrOptions::new(1, 0.2, radius);
        opts.epsilon = Some(1e-13);
        let (model, _) = lkrr_fit(&one, &y, &opts).unwrap();
        assert_eq!(model.mu.mu[0], 1.0 + radius);
        let scaled = combine(&one, &DVector::from_element(1, 1.0 + radius)).unwrap();
        let krr = krr_solve(&scaled, &y, 0.2 * 3.0).unwrap();
        assert!((model.alpha.0 - krr.0).amax() <= 1e-11);
    }

    #[test]
    fn converged_fit_is_a_fixed_point() {
        let (fam, y) = sample_family();
        let opts = LkrrOptions::new(2, 0.1, 1.7);
        let (model, report) = lkrr_fit(&fam, &y, &opts).unwrap();
        assert!(model.converged);
        let eps = default_epsilon(&y);
        let k = combine(&fam, &model.mu.mu).unwrap().to_dense();
        let target = solve_shifted(&k, &y, model.lambda).unwrap();
        assert!((target - &model.alpha.0).norm() <= 10.0 * eps);
        assert!((((&model.mu.mu - &opts.mu0).norm() - 1.7) / 1.7).abs() < 1e-8);
        assert_eq!(report.trajectory.unwrap().len(), model.iterations);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (fam, y) = sample_family();
        let mut opts = LkrrOptions::new(2, 0.01, 50.0);
        opts.max_iters = 1;
        opts.epsilon = Some(1e-300);
        let (model, _) = lkrr_fit(&fam, &y, &opts).unwrap();
        assert!(!model.converged);
        assert_eq!(model.iterations, 1);
    }

    #[test]
    fn rejects_bad_options() {
        let (fam, y) = sample_family();
        let mut opts = LkrrOptions::new(2, 0.1, 1.0);
        opts.eta = 1.0;
        assert!(lkrr_fit(&fam, &y, &opts).is_err());
        let mut opts = LkrrOptions::new(2, 0.1, 1.0);
        opts.mu0 = DVector::from_vec(vec![2.0, 3.0]);
        assert!(lkrr_fit(&fam, &y, &opts).is_err());
        assert!(lkrr_fit(&fam, &y, &LkrrOptions::new(2, 0.0, 1.0)).is_err());
    }
}
