//! The `diagnose` suites: optimality residuals and oracle agreement on random
//! PSD instances, the weight difference identity on random vectors, and
//! swap stability on a seeded regression task.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::synthetic::{random_psd_instance, SparseSignal};
use crate::diagnostics::{kkt_residuals, lemma1_check, stability_trial, StabilityReport};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::rng::{derive_seed, rng_for};
use crate::solver::{default_epsilon, lkrr_fit, oracle_fit, LkrrOptions, MuWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub instances: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub p_min: usize,
    pub p_max: usize,
    /// Run the projected-gradient reference solver on every instance.
    pub oracle: bool,
    pub oracle_tol: f64,
    pub lemma_triples: usize,
    pub swap_trials: usize,
    pub swap_sizes: Vec<usize>,
    pub swap_lambda0: f64,
    pub swap_radius: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            instances: 100,
            m_min: 5,
            m_max: 30,
            p_min: 1,
            p_max: 8,
            oracle: true,
            oracle_tol: 1e-10,
            lemma_triples: 1000,
            swap_trials: 1000,
            swap_sizes: vec![10, 50],
            swap_lambda0: 0.05,
            swap_radius: 1.0,
        }
    }
}

/// Parameters of one random PSD instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub m: usize,
    pub p: usize,
    pub lambda0: f64,
    pub radius: f64,
}

/// Draws instance `index` of the random PSD suite: `m` and `p` uniform in
/// their ranges, `λ0` log-uniform in `[1e-3, 1]`, `Λ` log-uniform in
/// `[0.1, 10]`.
pub fn instance(cfg: &DiagnoseConfig, seed: u64, index: usize) -> Result<(InstanceParams, KernelFamily, DVector<f64>)> {
    let mut rng = rng_for(derive_seed(seed, 1), index as u64);
    let m = rng.random_range(cfg.m_min..=cfg.m_max);
    let p = rng.random_range(cfg.p_min..=cfg.p_max);
    let lambda0 = 10f64.powf(rng.random_range(-3.0..=0.0));
    let radius = 10f64.powf(rng.random_range(-1.0..=1.0));
    let inst = random_psd_instance(&mut rng, m, p)?;
    Ok((InstanceParams { m, p, lambda0, radius }, inst.family, inst.y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub params: InstanceParams,
    pub converged: bool,
    pub iterations: usize,
    pub epsilon: f64,
    pub r_alpha: f64,
    pub r_mu: f64,
    /// `|‖μ − μ0‖ − Λ| / Λ`.
    pub constraint_gap: f64,
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_r_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_r_mu: Option<f64>,
}

pub fn run_instance(cfg: &DiagnoseConfig, seed: u64, index: usize) -> Result<InstanceResult> {
    let (params, family, y) = instance(cfg, seed, index)?;
    let opts = LkrrOptions::new(params.p, params.lambda0, params.radius);
    let (model, report) = lkrr_fit(&family, &y, &opts)?;
    let (r_alpha, r_mu) = kkt_residuals(&model, &family, &y)?;
    let dist = (&model.mu.mu - &model.mu.mu0).norm();
    let (oracle_objective, oracle_r_alpha, oracle_r_mu) = if cfg.oracle {
        let o = oracle_fit(&family, &y, params.lambda0, params.radius, &opts.mu0, cfg.oracle_tol)?;
        let (ra, rm) = crate::diagnostics::kkt_residuals_for(&family, &y, model.lambda, &o.weights, &o.alpha)?;
        (Some(o.objective), Some(ra), Some(rm))
    } else {
        (None, None, None)
    };
    Ok(InstanceResult {
        converged: model.converged,
        iterations: model.iterations,
        epsilon: default_epsilon(&y),
        r_alpha,
        r_mu,
        constraint_gap: (dist - params.radius).abs() / params.radius,
        objective: report.objective_value,
        oracle_objective,
        oracle_r_alpha,
        oracle_r_mu,
        params,
    })
}

/// The sparse-signal task on `d = 5` features with the linear kernel, one
/// rank-1 kernel per feature, and the offset: feature dimension 6.
pub fn swap_task() -> (SparseSignal, Vec<KernelSpec>) {
    let signal = SparseSignal::new(5, 2, 0.5).expect("valid signal");
    let mut specs = vec![KernelSpec::Linear];
    specs.extend((0..5).map(|feature_index| KernelSpec::Rank1Feature { feature_index }));
    specs.push(KernelSpec::ConstantOffset);
    (signal, specs)
}

/// Swap stability at sample size `m` with the combined kernel frozen at the
/// weights learned on the base sample.
pub fn run_swaps(cfg: &DiagnoseConfig, seed: u64, m: usize) -> Result<StabilityReport> {
    let (signal, specs) = swap_task();
    let mut rng = rng_for(derive_seed(seed, 3), m as u64);
    let base = signal.dataset(m, &mut rng);
    let family = KernelFamily::build(specs.clone(), &base.x)?;
    let opts = LkrrOptions::new(specs.len(), cfg.swap_lambda0, cfg.swap_radius);
    let (model, _) = lkrr_fit(&family, &base.y, &opts)?;
    let mu: MuWeights = model.mu;
    stability_trial(
        &specs,
        &base.x,
        &base.y,
        cfg.swap_lambda0,
        &mu,
        cfg.swap_trials,
        derive_seed(seed, 4 + m as u64),
        |r| Some(signal.sample(r)),
    )
}

/// Largest weight-identity discrepancy over random triples with `p` uniform
/// in `1..=20`, entries uniform in `[0, 10)` and `Λ` uniform in `[0, 10)`.
pub fn run_lemma(triples: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_for(derive_seed(seed, 2), 0);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < triples {
        let p = rng.random_range(1..=20);
        let v = DVector::from_fn(p, |_, _| rng.random_range(0.0..10.0));
        let w = DVector::from_fn(p, |_, _| rng.random_range(0.0..10.0));
        let radius = rng.random_range(0.0..10.0);
        if v.norm() == 0.0 || w.norm() == 0.0 {
            continue;
        }
        worst = worst.max(lemma1_check(&v, &w, radius)?);
        done += 1;
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub m: usize,
    pub trials: usize,
    pub violations: usize,
    pub classical_order_violations: usize,
    pub max_empirical_delta: f64,
    pub bound: f64,
    pub kappa: f64,
    pub m_emp: f64,
    pub lambda_min: f64,
}

impl StabilitySummary {
    pub fn of(m: usize, r: &StabilityReport) -> Self {
        StabilitySummary {
            m,
            trials: r.trials,
            violations: r.violations,
            classical_order_violations: r.classical_order_violations,
            max_empirical_delta: r.max_empirical_delta,
            bound: r.bound_thm2,
            kappa: r.kappa,
            m_emp: r.m_emp,
            lambda_min: r.lambda_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub seed: u64,
    pub instances: Vec<InstanceResult>,
    pub worst_kkt_over_epsilon: f64,
    pub median_iterations: f64,
    pub lemma_triples: usize,
    pub lemma_max_discrepancy: f64,
    pub stability: Vec<StabilitySummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn run_diagnose(cfg: &DiagnoseConfig, seed: u64) -> Result<DiagnoseReport> {
    if cfg.m_min == 0 || cfg.m_min > cfg.m_max || cfg.p_min == 0 || cfg.p_min > cfg.p_max {
        return Err(Error::Config("diagnose ranges need 1 ≤ min ≤ max".into()));
    }
    let instances = (0..cfg.instances)
        .map(|i| run_instance(cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let worst = instances
        .iter()
        .map(|r| r.r_alpha.max(r.r_mu) / r.epsilon)
        .fold(0.0, f64::max);
    let mut iters: Vec<f64> = instances.iter().map(|r| r.iterations as f64).collect();
    let stability = cfg
        .swap_sizes
        .iter()
        .map(|&m| run_swaps(cfg, seed, m).map(|r| StabilitySummary::of(m, &r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnoseReport {
        seed,
        median_iterations: median(&mut iters),
        worst_kkt_over_epsilon: worst,
        instances,
        lemma_triples: cfg.lemma_triples,
        lemma_max_discrepancy: run_lemma(cfg.lemma_triples, seed)?,
        stability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_runs_and_is_reproducible() {
        let cfg = DiagnoseConfig {
            instances: 4,
            lemma_triples: 50,
            swap_trials: 20,
            swap_sizes: vec![10],
            ..DiagnoseConfig::default()
        };
        let a = run_diagnose(&cfg, 3).unwrap();
        let b = run_diagnose(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.instances.len(), 4);
        assert!(a.lemma_max_discrepancy <= 1e-10);
        assert_eq!(a.stability[0].violations, 0);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
