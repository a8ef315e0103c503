//! Solver invariants over random PSD instances.

use nalgebra::DVector;
use proptest::prelude::*;

use lkrr::data::synthetic::random_psd_instance;
use lkrr::diagnostics::kkt_residuals;
use lkrr::kernels::{combine, KernelFamily};
use lkrr::rng::rng_for;
use lkrr::solver::{
    default_epsilon, dual_value, krr_solve, l1_fit, lkrr_fit, oracle_fit, L1Options, LkrrOptions,
};

fn problem(seed: u64, m: usize, p: usize) -> (KernelFamily, DVector<f64>) {
    let inst = random_psd_instance(&mut rng_for(seed, 0), m, p).unwrap();
    (inst.family, inst.y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_fits_are_fixed_points_on_the_sphere(
        seed in any::<u64>(), m in 5usize..=30, p in 1usize..=8,
        lambda0 in 1e-3f64..1.0, radius in 0.1f64..10.0,
    ) {
        let (family, y) = problem(seed, m, p);
        let (model, _) = lkrr_fit(&family, &y, &LkrrOptions::new(p, lambda0, radius)).unwrap();
        prop_assume!(model.converged);
        let eps = default_epsilon(&y);
        let (r_alpha, r_mu) = kkt_residuals(&model, &family, &y).unwrap();
        prop_assert!(r_alpha <= 10.0 * eps, "r_alpha {r_alpha:e}");
        prop_assert!(r_mu <= 10.0 * eps, "r_mu {r_mu:e}");
        let dist = (&model.mu.mu - &model.mu.mu0).norm();
        prop_assert!((dist - radius).abs() <= 1e-8 * radius);
        prop_assert!(model.mu.mu.iter().zip(model.mu.mu0.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn zero_radius_is_plain_ridge_on_the_anchor(
        seed in any::<u64>(), m in 5usize..=30, p in 1usize..=8, lambda0 in 1e-3f64..1.0,
    ) {
        let (family, y) = problem(seed, m, p);
        let opts = LkrrOptions::new(p, lambda0, 0.0);
        let (model, _) = lkrr_fit(&family, &y, &opts).unwrap();
        let k0 = combine(&family, &opts.mu0).unwrap();
        let plain = krr_solve(&k0, &y, lambda0 * m as f64).unwrap();
        prop_assert!((&model.alpha.0 - &plain.0).norm() <= 1e-10);
    }

    #[test]
    fn ridge_residual_is_small(seed in any::<u64>(), m in 2usize..=40, p in 1usize..=4, lambda in 1e-3f64..10.0) {
        let (family, y) = problem(seed, m, p);
        let k = combine(&family, &DVector::from_element(p, 1.0)).unwrap();
        let alpha = krr_solve(&k, &y, lambda).unwrap();
        let r = (k.to_dense() * &alpha.0 + &alpha.0 * lambda - &y).norm();
        prop_assert!(r <= 1e-8 * y.norm());
    }

    #[test]
    fn learned_weights_never_lose_to_the_anchor(
        seed in any::<u64>(), m in 5usize..=20, p in 1usize..=5,
        lambda0 in 1e-2f64..1.0, radius in 0.1f64..5.0,
    ) {
        let (family, y) = problem(seed, m, p);
        let opts = LkrrOptions::new(p, lambda0, radius);
        let lambda = lambda0 * m as f64;
        let anchor = dual_value(&family, &y, lambda, &opts.mu0).unwrap().0;
        let (model, _) = lkrr_fit(&family, &y, &opts).unwrap();
        let learned = dual_value(&family, &y, lambda, &model.mu.mu).unwrap().0;
        prop_assert!(learned <= anchor * (1.0 + 1e-12));
        let oracle = oracle_fit(&family, &y, lambda0, radius, &opts.mu0, 1e-10).unwrap();
        prop_assert!((learned - oracle.objective).abs() <= 1e-6 * oracle.objective.abs().max(1.0));
    }

    #[test]
    fn l1_fit_is_feasible_and_beats_the_even_split(
        seed in any::<u64>(), m in 5usize..=20, p in 1usize..=6,
        lambda0 in 1e-2f64..1.0, scale in 0.1f64..10.0,
    ) {
        let (family, y) = problem(seed, m, p);
        let budget = scale * p as f64;
        let fit = l1_fit(&family, &y, lambda0, budget, &L1Options::default()).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.mu.iter().all(|&w| w >= 0.0));
        prop_assert!(fit.mu.sum() <= budget * (1.0 + 1e-12));
        let even = DVector::from_element(p, budget / p as f64);
        let even_value = dual_value(&family, &y, fit.lambda, &even).unwrap().0;
        prop_assert!(fit.objective <= even_value * (1.0 + 1e-12));
    }
}
