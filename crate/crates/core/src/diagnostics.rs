//! Numerical checks for fitted models: optimality residuals, the weight
//! difference identity, orthogonality of base kernels, empirical stability
//! under single-point swaps, and the values of the stability and
//! generalization bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{combine_into, cross_kernel, eigen_extremes, kappa0_over, rows_of, KernelFamily, KernelSpec, PSD_RELATIVE_TOLERANCE};
use crate::rng::rng_for;
use crate::solver::{compute_v, lkrr_fit, solve_shifted, DualVector, LkrrModel, LkrrOptions, MuWeights};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Slack allowed above the stability bound before a trial counts as a violation.
pub const VIOLATION_SLACK: f64 = 1e-9;

/// `(r_alpha, r_mu)` for a fitted model; see [`kkt_residuals_for`].
pub fn kkt_residuals(model: &LkrrModel, family: &KernelFamily, y: &DVector<f64>) -> Result<(f64, f64)> {
    kkt_residuals_for(family, y, model.lambda, &model.mu, &model.alpha)
}

/// `r_alpha = ‖(K(μ) + λI)α − y‖` and
/// `r_mu = ‖(μ − μ0)‖v‖ − Λv‖ / max(‖v‖, tiny)` with `v` recomputed from `α`.
pub fn kkt_residuals_for(
    family: &KernelFamily,
    y: &DVector<f64>,
    lambda: f64,
    weights: &MuWeights,
    alpha: &DualVector,
) -> Result<(f64, f64)> {
    let m = family.m();
    if y.len() != m || alpha.len() != m || weights.len() != family.len() {
        return Err(Error::Shape("residual arguments disagree in length".into()));
    }
    let mut k = DMatrix::zeros(m, m);
    combine_into(family, &weights.mu, &mut k);
    let a = alpha.as_vector();
    let r_alpha = (&k * a + a * lambda - y).norm();
    let (v, _) = compute_v(alpha, family)?;
    let v_norm = v.norm();
    let r_mu = ((&weights.mu - &weights.mu0) * v_norm - &v * weights.radius).norm()
        / v_norm.max(f64::MIN_POSITIVE);
    Ok((r_alpha, r_mu))
}

/// Largest `|LHS_k − RHS_k|` between the direct weight difference
/// `Λ(v′_k/‖v′‖ − v_k/‖v‖)` and its expansion in terms of `Δv`.
pub fn lemma1_check(v: &DVector<f64>, v_prime: &DVector<f64>, radius: f64) -> Result<f64> {
    if v.len() != v_prime.len() {
        return Err(Error::Shape("v and v′ differ in length".into()));
    }
    let n = v.norm();
    let n_prime = v_prime.norm();
    if n == 0.0 || n_prime == 0.0 {
        return Err(Error::Domain("both v and v′ must be nonzero".into()));
    }
    if v.iter().chain(v_prime.iter()).any(|&x| x < 0.0) {
        return Err(Error::Domain("v and v′ must be nonnegative".into()));
    }
    let dv = v_prime - v;
    let coupling: f64 = v
        .iter()
        .zip(v_prime.iter())
        .zip(dv.iter())
        .map(|((a, b), d)| (a + b) * d)
        .sum();
    let denom = n * n_prime * (n + n_prime);
    let worst = (0..v.len())
        .map(|k| {
            let lhs = radius * (v_prime[k] / n_prime - v[k] / n);
            let rhs = radius * (dv[k] / n_prime - v[k] * coupling / denom);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max);
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orthogonality {
    Orthogonal,
    NotOrthogonal,
    /// Some base kernel exposes no finite explicit feature map.
    NotCheckable,
}

/// Whether the explicit feature maps of the base kernels have pairwise
/// disjoint support at every sample point.
pub fn orthogonality_check(specs: &[KernelSpec], x: &DMatrix<f64>) -> Orthogonality {
    let d = x.ncols();
    if specs
        .iter()
        .any(|s| matches!(s, KernelSpec::Gaussian { .. } | KernelSpec::Polynomial { .. }))
    {
        return Orthogonality::NotCheckable;
    }
    let mut owner = vec![usize::MAX; d + 1];
    for row in rows_of(x) {
        owner.iter_mut().for_each(|o| *o = usize::MAX);
        for (k, spec) in specs.iter().enumerate() {
            let support = spec
                .feature_support(&row)
                .expect("explicit feature map checked above");
            for (coord, _) in support {
                if owner[coord] != usize::MAX && owner[coord] != k {
                    return Orthogonality::NotOrthogonal;
                }
                owner[coord] = k;
            }
        }
    }
    Orthogonality::Orthogonal
}

/// One swapped-sample comparison with a fixed combined kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub index: usize,
    /// `max_x |h′(x) − h(x)|` over the evaluation set.
    pub delta: f64,
    pub kappa: f64,
    pub m_emp: f64,
    pub lambda_min: f64,
    /// `2κM/(λmin + λ0 m)`.
    pub bound: f64,
    /// `2κM/(λ0 m)`.
    pub classical_bound: f64,
}

impl SwapRecord {
    pub fn violates(&self) -> bool {
        self.delta > self.bound + VIOLATION_SLACK
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Largest κ over trials.
    pub kappa: f64,
    /// Largest empirical `|h(x) − y|` over trials.
    pub m_emp: f64,
    /// Smallest λmin over trials.
    pub lambda_min: f64,
    /// `2·kappa·m_emp/(lambda_min + λ0 m)` from the aggregates above.
    pub bound_thm2: f64,
    pub max_empirical_delta: f64,
    pub trials: usize,
    /// Trials with `delta > bound + VIOLATION_SLACK`, each against its own bound.
    pub violations: usize,
    /// Trials whose λmin bound exceeds the classical `2κM/(λ0 m)` bound.
    pub classical_order_violations: usize,
    pub records: Vec<SwapRecord>,
}

/// Smallest eigenvalue of a combined Gram, with numerically zero or negative
/// values mapped to 0.
pub fn lambda_min_of(k: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_extremes(k);
    if lo <= PSD_RELATIVE_TOLERANCE * hi.max(0.0) {
        0.0
    } else {
        lo
    }
}

fn combined_gram(specs: &[KernelSpec], mu: &DVector<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cross_kernel(specs, mu, x, x)
}

/// Replaces training point `index` by `(new_x, new_y)`, refits the dual with
/// `μ` fixed, and compares both hypotheses on the union of both samples and
/// `eval`.
#[allow(clippy::too_many_arguments)]
pub fn swap_outcome(
    specs: &[KernelSpec],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda0: f64,
    mu: &MuWeights,
    index: usize,
    new_x: &[f64],
    new_y: f64,
    eval: &[(Vec<f64>, f64)],
) -> Result<SwapRecord> {
    let m = x.nrows();
    let d = x.ncols();
    if index >= m || new_x.len() != d || y.len() != m {
        return Err(Error::Shape("swap arguments disagree with the sample".into()));
    }
    let lambda = lambda0 * m as f64;
    let k = combined_gram(specs, &mu.mu, x)?;
    let alpha = solve_shifted(&k, y, lambda)?;

    let mut x_swapped = x.clone();
    x_swapped.row_mut(index).copy_from_slice(new_x);
    let mut y_swapped = y.clone();
    y_swapped[index] = new_y;
    let k_swapped = combined_gram(specs, &mu.mu, &x_swapped)?;
    let alpha_swapped = solve_shifted(&k_swapped, &y_swapped, lambda)?;

    let n_eval = m + 1 + eval.len();
    let mut points = DMatrix::zeros(n_eval, d);
    let mut labels = DVector::zeros(n_eval);
    for i in 0..m {
        points.row_mut(i).copy_from(&x.row(i));
        labels[i] = y[i];
    }
    points.row_mut(m).copy_from_slice(new_x);
    labels[m] = new_y;
    for (j, (z, t)) in eval.iter().enumerate() {
        if z.len() != d {
            return Err(Error::Shape("evaluation point dimension mismatch".into()));
        }
        points.row_mut(m + 1 + j).copy_from_slice(z);
        labels[m + 1 + j] = *t;
    }
    let h = cross_kernel(specs, &mu.mu, x, &points)? * &alpha;
    let h_swapped = cross_kernel(specs, &mu.mu, &x_swapped, &points)? * &alpha_swapped;

    let delta = (&h_swapped - &h).amax();
    let m_emp = (&h - &labels).amax().max((&h_swapped - &labels).amax());
    let rows = rows_of(&points);
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let kappa = kappa0_over(specs, &refs) * mu.norm_bound();
    let lambda_min = lambda_min_of(&k_swapped);
    Ok(SwapRecord {
        index,
        delta,
        kappa,
        m_emp,
        lambda_min,
        bound: 2.0 * kappa * m_emp / (lambda_min + lambda),
        classical_bound: 2.0 * kappa * m_emp / lambda,
    })
}

/// Number of fresh evaluation points drawn per swap trial.
pub const EVAL_POINTS_PER_TRIAL: usize = 100;

/// Runs `swaps` independent single-point swaps against the sample `(x, y)`
/// with the combined kernel frozen at `mu`.
///
/// `generator` draws labelled points; returning `None` aborts the run.
/// Trial `t` uses a generator stream derived from `seed` and `t`.
#[allow(clippy::too_many_arguments)]
pub fn stability_trial<G>(
    specs: &[KernelSpec],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda0: f64,
    mu: &MuWeights,
    swaps: usize,
    seed: u64,
    mut generator: G,
) -> Result<StabilityReport>
where
    G: FnMut(&mut ChaCha8Rng) -> Option<(Vec<f64>, f64)>,
{
    if swaps == 0 {
        return Err(Error::Domain("at least one swap is required".into()));
    }
    let m = x.nrows();
    let mut records = Vec::with_capacity(swaps);
    for t in 0..swaps {
        let mut rng = rng_for(seed, t as u64);
        let index = rng.random_range(0..m);
        let (new_x, new_y) = generator(&mut rng)
            .ok_or_else(|| Error::Trial(format!("generator exhausted at trial {t}")))?;
        let eval = (0..EVAL_POINTS_PER_TRIAL)
            .map(|_| generator(&mut rng))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Trial(format!("generator exhausted at trial {t}")))?;
        records.push(swap_outcome(specs, x, y, lambda0, mu, index, &new_x, new_y, &eval)?);
    }
    Ok(summarize(records, lambda0 * m as f64))
}

fn summarize(records: Vec<SwapRecord>, lambda: f64) -> StabilityReport {
    let kappa = records.iter().map(|r| r.kappa).fold(0.0, f64::max);
    let m_emp = records.iter().map(|r| r.m_emp).fold(0.0, f64::max);
    let lambda_min = records.iter().map(|r| r.lambda_min).fold(f64::INFINITY, f64::min);
    StabilityReport {
        kappa,
        m_emp,
        lambda_min,
        bound_thm2: 2.0 * kappa * m_emp / (lambda_min + lambda),
        max_empirical_delta: records.iter().map(|r| r.delta).fold(0.0, f64::max),
        trials: records.len(),
        violations: records.iter().filter(|r| r.violates()).count(),
        classical_order_violations: records
            .iter()
            .filter(|r| r.bound > r.classical_bound)
            .count(),
        records,
    }
}

/// Swap study for the full pipeline, where the kernel weights are refit on
/// each swapped sample. Compared against the stability bound on `|Δh|`
/// informationally only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedStabilityReport {
    pub trials: usize,
    pub max_delta: f64,
    pub kappa: f64,
    pub m_emp: f64,
    /// `(C0 + C1√p)/(λ0 m)` at the aggregate κ and M.
    pub bound: f64,
    pub exceedances: usize,
    pub orthogonality: Orthogonality,
}

#[allow(clippy::too_many_arguments)]
pub fn learned_stability_trial<G>(
    specs: &[KernelSpec],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    opts: &LkrrOptions,
    swaps: usize,
    seed: u64,
    mut generator: G,
) -> Result<LearnedStabilityReport>
where
    G: FnMut(&mut ChaCha8Rng) -> Option<(Vec<f64>, f64)>,
{
    if swaps == 0 {
        return Err(Error::Domain("at least one swap is required".into()));
    }
    let m = x.nrows();
    let d = x.ncols();
    let p = specs.len();
    let fit = |xs: &DMatrix<f64>, ys: &DVector<f64>| -> Result<LkrrModel> {
        let family = KernelFamily::build(specs.to_vec(), xs)?;
        Ok(lkrr_fit(&family, ys, opts)?.0)
    };
    let base = fit(x, y)?;
    let mut per_trial = Vec::with_capacity(swaps);
    for t in 0..swaps {
        let mut rng = rng_for(seed, t as u64);
        let index = rng.random_range(0..m);
        let exhausted = || Error::Trial(format!("generator exhausted at trial {t}"));
        let (new_x, new_y) = generator(&mut rng).ok_or_else(exhausted)?;
        let eval = (0..EVAL_POINTS_PER_TRIAL)
            .map(|_| generator(&mut rng))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(exhausted)?;
        let mut xs = x.clone();
        xs.row_mut(index).copy_from_slice(&new_x);
        let mut ys = y.clone();
        ys[index] = new_y;
        let swapped = fit(&xs, &ys)?;

        let mut points = DMatrix::zeros(m + 1 + eval.len(), d);
        let mut labels = DVector::zeros(m + 1 + eval.len());
        for i in 0..m {
            points.row_mut(i).copy_from(&x.row(i));
            labels[i] = y[i];
        }
        points.row_mut(m).copy_from_slice(&new_x);
        labels[m] = new_y;
        for (j, (z, l)) in eval.iter().enumerate() {
            points.row_mut(m + 1 + j).copy_from_slice(z);
            labels[m + 1 + j] = *l;
        }
        let h = cross_kernel(specs, &base.mu.mu, x, &points)? * base.alpha.as_vector();
        let h2 = cross_kernel(specs, &swapped.mu.mu, &xs, &points)? * swapped.alpha.as_vector();
        let rows = rows_of(&points);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        per_trial.push((
            (&h2 - &h).amax(),
            kappa0_over(specs, &refs) * base.mu.norm_bound(),
            (&h - &labels).amax().max((&h2 - &labels).amax()),
        ));
    }
    let kappa = per_trial.iter().map(|t| t.1).fold(0.0, f64::max);
    let m_emp = per_trial.iter().map(|t| t.2).fold(0.0, f64::max);
    let bounds = bound_values(kappa, m_emp, opts.radius, opts.lambda0, p, m, 0.05)?;
    let bound = (bounds.c0 + bounds.c1 * (p as f64).sqrt()) / (opts.lambda0 * m as f64);
    Ok(LearnedStabilityReport {
        trials: swaps,
        max_delta: per_trial.iter().map(|t| t.0).fold(0.0, f64::max),
        kappa,
        m_emp,
        bound,
        exceedances: per_trial.iter().filter(|t| t.0 > bound).count(),
        orthogonality: orthogonality_check(specs, x),
    })
}

/// Constants of the learned-kernel stability bound and the resulting
/// generalization gap.
///
/// `c0` and `c1` already carry a factor `M`, and `beta` multiplies by another
/// `2M`; the values follow that arrangement as stated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub c0: f64,
    pub c1: f64,
    pub beta: f64,
    pub generalization_gap_bound: f64,
}

pub fn bound_values(
    kappa: f64,
    m_bound: f64,
    radius: f64,
    lambda0: f64,
    p: usize,
    m: usize,
    delta: f64,
) -> Result<BoundValues> {
    if !(kappa > 0.0) || !(m_bound > 0.0) || !(lambda0 > 0.0) {
        return Err(Error::Domain("κ, M and λ0 must be positive".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::Domain("Λ must be nonnegative".into()));
    }
    if p == 0 || m == 0 {
        return Err(Error::Domain("p and m must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    let m_f = m as f64;
    let c0 = 2.0 * kappa * m_bound
        + 4.0 * radius * m_bound * kappa.sqrt() * (kappa / lambda0 + 1.0);
    let c1 = 16.0 * radius * radius * m_bound * kappa.powf(1.5) / lambda0;
    let beta = 2.0 * m_bound * (c0 + c1 * (p as f64).sqrt()) / (lambda0 * m_f);
    let gap = 2.0 * beta + (4.0 * m_f * beta + m_bound) * ((1.0 / delta).ln() / (2.0 * m_f)).sqrt();
    Ok(BoundValues {
        c0,
        c1,
        beta,
        generalization_gap_bound: gap,
    })
}
