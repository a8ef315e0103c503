//! L1-constrained baseline: minimize `F(μ) = yᵀ(K(μ) + λI)⁻¹y` over
//! `{μ ≥ 0, Σ μ_k ≤ Λ1}`.
//!
//! The default solver is a projected Newton method: each step minimizes the
//! local quadratic model `gᵀd + ½ dᵀHd` over the capped simplex, with
//! `H = 2 Uᵀ(K + λI)⁻¹U` and `U = [K_1 α, …, K_p α]`, then backtracks along
//! the segment to that minimizer. The plain Euclidean variant is kept for
//! cross-checks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::oracle::{dual_value, value_and_gradient};
use super::projection::{project_capped_simplex, projected_gradient};
use super::DualVector;
use crate::error::{Error, Result};
use crate::kernels::{combine_into, eigen_extremes, kernel_products, KernelFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L1Scaling {
    /// Steps scaled by the Hessian of `F`.
    Newton,
    /// Unscaled projected gradient with backtracking.
    Euclidean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Options {
    /// The Newton variant stops once the Frank-Wolfe gap is below
    /// `tol · max(1, |F|)`, or when `F` stops decreasing in floating point
    /// with the gap below `sqrt(tol) · max(1, |F|)`. The Euclidean one uses
    /// the first test only.
    pub tol: f64,
    pub max_iters: usize,
    pub scaling: L1Scaling,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options {
            tol: 1e-9,
            max_iters: 5_000,
            scaling: L1Scaling::Newton,
        }
    }
}

#[derive(Clone, Debug)]
pub struct L1Fit {
    pub mu: DVector<f64>,
    pub alpha: DualVector,
    pub objective: f64,
    pub lambda: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out first.
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

pub fn l1_fit(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda0: f64,
    budget: f64,
    opts: &L1Options,
) -> Result<L1Fit> {
    let m = family.m();
    let p = family.len();
    if y.len() != m {
        return Err(Error::Shape(format!("{} labels for {} points", y.len(), m)));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::Domain(format!("Λ1 must be positive, got {budget}")));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::Domain(format!("λ0 must be positive, got {lambda0}")));
    }
    let lambda = lambda0 * m as f64;
    let start = DVector::from_element(p, budget / p as f64);
    let (mu, iterations, converged) = match opts.scaling {
        L1Scaling::Newton => newton(family, y, lambda, budget, start, opts)?,
        L1Scaling::Euclidean => {
            let outcome = projected_gradient(
                start,
                |mu| value_and_gradient(family, y, lambda, mu),
                |z| Ok(project_capped_simplex(z, budget)),
                |mu, g| frank_wolfe_gap(g, mu, budget),
                opts.tol,
                opts.max_iters,
            )?;
            (outcome.point, outcome.iterations, outcome.converged)
        }
    };
    let (objective, alpha) = dual_value(family, y, lambda, &mu)?;
    Ok(L1Fit {
        mu,
        alpha: DualVector(alpha),
        objective,
        lambda,
        iterations,
        converged,
    })
}

/// `gᵀμ − min(0, Λ1 · min_k g_k)`: the largest first-order decrease towards
/// any vertex of the capped simplex.
pub fn frank_wolfe_gap(grad: &DVector<f64>, mu: &DVector<f64>, budget: f64) -> f64 {
    grad.dot(mu) - (budget * grad.min()).min(0.0)
}

fn factor(family: &KernelFamily, lambda: f64, mu: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let m = family.m();
    let mut k = DMatrix::zeros(m, m);
    combine_into(family, mu, &mut k);
    let min_eigenvalue = || eigen_extremes(&k).0;
    let mut a = k.clone();
    for i in 0..m {
        a[(i, i)] += lambda;
    }
    a.cholesky().ok_or_else(|| Error::Factorization {
        min_eigenvalue: min_eigenvalue(),
    })
}

fn newton(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda: f64,
    budget: f64,
    mut mu: DVector<f64>,
    opts: &L1Options,
) -> Result<(DVector<f64>, usize, bool)> {
    let mut chol = factor(family, lambda, &mu)?;
    for iteration in 1..=opts.max_iters {
        let alpha = chol.solve(y);
        let value = y.dot(&alpha);
        let u = kernel_products(family, &alpha);
        let grad = -(u.transpose() * &alpha);
        let gap = frank_wolfe_gap(&grad, &mu, budget);
        let scale = value.abs().max(1.0);
        if gap <= opts.tol * scale {
            return Ok((mu, iteration - 1, true));
        }
        let w = chol.solve(&u);
        let mut hess = u.transpose() * w * 2.0;
        hess = (&hess + hess.transpose()) * 0.5;
        let target = quadratic_step(&grad, &hess, &mu, budget);
        let mut dir = &target - &mu;
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            // The inner solve made no progress; use the Frank-Wolfe vertex.
            let mut vertex = DVector::zeros(mu.len());
            if grad.min() < 0.0 {
                vertex[grad.imin()] = budget;
            }
            dir = vertex - &mu;
            slope = grad.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = (&mu + &dir * t).map(|x| x.max(0.0));
            let cand_chol = factor(family, lambda, &cand)?;
            let cand_value = y.dot(&cand_chol.solve(y));
            if cand != mu && cand_value <= value + ARMIJO * t * slope {
                accepted = Some((cand, cand_chol));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_chol)) => {
                mu = cand;
                chol = cand_chol;
            }
            // No representable decrease left: `F` is flat to rounding here.
            None => return Ok((mu, iteration, gap <= opts.tol.sqrt() * scale)),
        }
    }
    Ok((mu, opts.max_iters, false))
}

/// Minimizes `gᵀ(z − μ) + ½ (z − μ)ᵀH(z − μ)` over the capped simplex with a
/// primal active-set method started at the feasible point `μ`. A ridge of
/// `1e-10 · max diag H` keeps the equality-constrained subproblems definite.
fn quadratic_step(grad: &DVector<f64>, hess: &DMatrix<f64>, mu: &DVector<f64>, budget: f64) -> DVector<f64> {
    let p = mu.len();
    let ridge = 1e-10 * hess.diagonal().max().max(1e-300);
    let mut h = hess.clone();
    for k in 0..p {
        h[(k, k)] += ridge;
    }
    let c = grad - &h * mu;
    let mut z = mu.clone();
    let mut at_zero: Vec<bool> = z.iter().map(|&x| x <= 0.0).collect();
    let mut sum_active = z.sum() >= budget * (1.0 - 1e-14);
    let tol = 1e-13 * (1.0 + grad.amax());
    for _ in 0..(20 * p + 100) {
        let free: Vec<usize> = (0..p).filter(|&k| !at_zero[k]).collect();
        let Some((target, nu)) = subproblem(&h, &c, &free, sum_active.then_some(budget)) else {
            break;
        };
        let mut step = 1.0;
        let mut blocking = None;
        for (i, &k) in free.iter().enumerate() {
            let d = target[i] - z[k];
            if d < 0.0 && -z[k] / d < step {
                step = -z[k] / d;
                blocking = Some(Some(k));
            }
        }
        if !sum_active {
            let rise: f64 = free.iter().enumerate().map(|(i, &k)| target[i] - z[k]).sum();
            let room = budget - z.sum();
            if rise > 0.0 && room / rise < step {
                step = (room / rise).max(0.0);
                blocking = Some(None);
            }
        }
        for (i, &k) in free.iter().enumerate() {
            z[k] += step * (target[i] - z[k]);
        }
        match blocking {
            Some(Some(k)) => {
                z[k] = 0.0;
                at_zero[k] = true;
            }
            Some(None) => sum_active = true,
            None => {
                // Stationary on the working set: release the constraint with
                // the most negative multiplier, if any.
                let r = &c + &h * &z;
                let mut worst = (-tol, None);
                for k in (0..p).filter(|&k| at_zero[k]) {
                    let multiplier = r[k] + nu;
                    if multiplier < worst.0 {
                        worst = (multiplier, Some(Some(k)));
                    }
                }
                if sum_active && nu < worst.0 {
                    worst = (nu, Some(None));
                }
                match worst.1 {
                    Some(Some(k)) => at_zero[k] = false,
                    Some(None) => sum_active = false,
                    None => break,
                }
            }
        }
    }
    z.map(|x| x.max(0.0))
}

/// Minimizer of `cᵀz + ½ zᵀHz` over the coordinates in `free`, with the
/// others at zero and, when `total` is given, `Σ z = total`. Returns the free
/// coordinates and the multiplier of the sum constraint (zero when absent).
fn subproblem(h: &DMatrix<f64>, c: &DVector<f64>, free: &[usize], total: Option<f64>) -> Option<(DVector<f64>, f64)> {
    let n = free.len();
    if n == 0 {
        return Some((DVector::zeros(0), 0.0));
    }
    let size = n + usize::from(total.is_some());
    let mut a = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    for (i, &k) in free.iter().enumerate() {
        for (j, &l) in free.iter().enumerate() {
            a[(i, j)] = h[(k, l)];
        }
        b[i] = -c[k];
    }
    if let Some(total) = total {
        for i in 0..n {
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        b[n] = total;
    }
    let x = a.lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let nu = if total.is_some() { x[n] } else { 0.0 };
    Some((x.rows(0, n).into_owned(), nu))
}
