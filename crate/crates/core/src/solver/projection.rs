//! Euclidean projections onto the two constraint sets and a projected
//! gradient loop with backtracking.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Alternation cap for [`project_ball_orthant`].
pub const MAX_ALTERNATIONS: usize = 10_000;

fn project_ball(z: &DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = z - center;
    let n = d.norm();
    if n <= radius {
        z.clone()
    } else {
        center + d * (radius / n)
    }
}

fn project_orthant(z: &DVector<f64>) -> DVector<f64> {
    z.map(|x| x.max(0.0))
}

/// Projects onto `{μ ≥ 0, ‖μ − center‖ ≤ radius}` by Dykstra's alternating
/// projections (ball first, then orthant).
pub fn project_ball_orthant(
    z: &DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
) -> Result<DVector<f64>> {
    let mut x = z.clone();
    let mut p = DVector::zeros(z.len());
    let mut q = DVector::zeros(z.len());
    let scale = 1.0 + z.amax() + center.amax() + radius;
    for _ in 0..MAX_ALTERNATIONS {
        let y = project_ball(&(&x + &p), center, radius);
        p = &x + &p - &y;
        let next = project_orthant(&(&y + &q));
        q = &y + &q - &next;
        let change = (&next - &x).amax();
        x = next;
        let infeasible = ((&x - center).norm() - radius).max(0.0);
        if change <= 1e-14 * scale && infeasible <= 1e-12 * scale {
            return Ok(x);
        }
    }
    Err(Error::Oracle(format!(
        "ball/orthant projection did not converge after {MAX_ALTERNATIONS} alternations"
    )))
}

/// Projects onto `{μ ≥ 0, Σ μ ≤ budget}`.
pub fn project_capped_simplex(z: &DVector<f64>, budget: f64) -> DVector<f64> {
    let clipped = project_orthant(z);
    if clipped.sum() <= budget {
        return clipped;
    }
    let mut sorted: Vec<f64> = z.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - budget) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    z.map(|x| (x - theta).max(0.0))
}

pub(crate) struct PgdOutcome {
    pub point: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes a smooth convex function over a convex set.
///
/// `eval` returns the value and gradient; `project` maps onto the set;
/// `gap` bounds `f(μ) − min f` from the point and its gradient. The step is
/// halved until the quadratic upper bound holds and doubled after each
/// accepted step. Stops when the gap is below `tol · max(1, |f|)`.
pub(crate) fn projected_gradient<E, P, G>(
    start: DVector<f64>,
    mut eval: E,
    mut project: P,
    mut gap: G,
    tol: f64,
    max_iters: usize,
) -> Result<PgdOutcome>
where
    E: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    G: FnMut(&DVector<f64>, &DVector<f64>) -> f64,
{
    let mut point = project(&start)?;
    let (mut value, mut grad) = eval(&point)?;
    if gap(&point, &grad) <= tol * value.abs().max(1.0) {
        return Ok(PgdOutcome {
            point,
            iterations: 0,
            converged: true,
        });
    }
    let mut step = 1.0 / grad.norm().max(1e-300);
    step = step.min(1e12);
    for iteration in 1..=max_iters {
        let mut accepted = None;
        for _ in 0..200 {
            let candidate = project(&(&point - &grad * step))?;
            let delta = &candidate - &point;
            let (cand_value, cand_grad) = eval(&candidate)?;
            let bound = value + grad.dot(&delta) + delta.norm_squared() / (2.0 * step);
            if cand_value <= bound + 1e-15 * value.abs().max(1.0) {
                accepted = Some((candidate, cand_value, cand_grad));
                break;
            }
            step *= 0.5;
        }
        let (candidate, cand_value, cand_grad) = accepted.ok_or_else(|| {
            Error::Oracle("backtracking line search failed to find a descent step".into())
        })?;
        point = candidate;
        value = cand_value;
        grad = cand_grad;
        if gap(&point, &grad) <= tol * value.abs().max(1.0) {
            return Ok(PgdOutcome {
                point,
                iterations: iteration,
                converged: true,
            });
        }
        step *= 2.0;
    }
    Ok(PgdOutcome {
        point,
        iterations: max_iters,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ball_projection_of_feasible_point_is_identity() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let z = DVector::from_vec(vec![1.5, 0.8]);
        assert_eq!(project_ball_orthant(&z, &c, 1.0).unwrap(), z);
    }

    #[test]
    fn ball_projection_rescales_radially() {
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let z = DVector::from_vec(vec![4.0, 5.0]);
        let x = project_ball_orthant(&z, &c, 2.5).unwrap();
        assert!((x - DVector::from_vec(vec![2.5, 3.0])).amax() < 1e-12);
    }

    #[test]
    fn capped_simplex_examples() {
        let z = DVector::from_vec(vec![0.2, -1.0, 0.3]);
        assert_eq!(project_capped_simplex(&z, 1.0).as_slice(), &[0.2, 0.0, 0.3]);
        let z = DVector::from_vec(vec![2.0, 1.0, -3.0]);
        let x = project_capped_simplex(&z, 1.0);
        assert!((x - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-15);
    }

    /// Brute-force check of optimality: no feasible point sampled on a fine
    /// grid around the projection is closer to `z`.
    fn check_projection_optimal(
        z: &DVector<f64>,
        x: &DVector<f64>,
        feasible: impl Fn(&DVector<f64>) -> bool,
    ) -> bool {
        let best = (z - x).norm();
        let n = 24;
        for i in 0..=n {
            for j in 0..=n {
                let offset = DVector::from_vec(vec![
                    -0.3 + 0.6 * i as f64 / n as f64,
                    -0.3 + 0.6 * j as f64 / n as f64,
                ]);
                let cand = x + offset;
                if feasible(&cand) && (z - &cand).norm() < best - 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    proptest! {
        #[test]
        fn ball_orthant_projection_is_feasible_and_nearest(
            zx in -4.0f64..4.0, zy in -4.0f64..4.0, c0 in 1.0f64..2.0, radius in 0.1f64..3.0,
        ) {
            let z = DVector::from_vec(vec![zx, zy]);
            let c = DVector::from_vec(vec![1.0, c0]);
            let x = project_ball_orthant(&z, &c, radius).unwrap();
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            prop_assert!((&x - &c).norm() <= radius * (1.0 + 1e-12));
            let ok = check_projection_optimal(&z, &x, |p| {
                p.iter().all(|&v| v >= 0.0) && (p - &c).norm() <= radius
            });
            prop_assert!(ok);
        }

        #[test]
        fn capped_simplex_projection_is_feasible_and_nearest(
            zx in -3.0f64..3.0, zy in -3.0f64..3.0, budget in 0.1f64..2.0,
        ) {
            let z = DVector::from_vec(vec![zx, zy]);
            let x = project_capped_simplex(&z, budget);
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            prop_assert!(x.sum() <= budget * (1.0 + 1e-12));
            let ok = check_projection_optimal(&z, &x, |p| {
                p.iter().all(|&v| v >= 0.0) && p.sum() <= budget
            });
            prop_assert!(ok);
        }
    }
}
