use nalgebra::DMatrix;

use super::{LqrCostSpec, LtiSystem, Policy};
use crate::error::{Error, Result};

/// Convergence threshold on successive value matrices (Frobenius norm).
pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITERS: usize = 1_000_000;

/// Optimal discounted LQR gain and cost `J* = Tr(P*)` by Riccati value
/// iteration on the `sqrt(gamma)`-damped plant.
pub fn optimal_lqr(sys: &LtiSystem, spec: &LqrCostSpec) -> Result<(Policy, f64)> {
    spec.check_dims(sys)?;
    let damped = sys.damped(spec.gamma());
    let (a, b) = (damped.a(), damped.b());
    let (q, r) = (spec.q(), spec.r());

    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let k = gain_for(&p, a, b, r)?;
        // closed-loop form keeps the iterate symmetric positive definite
        let closed = a - b * &k;
        let next = q + k.transpose() * r * &k + closed.transpose() * &p * &closed;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let step = (&next - &p).norm();
        p = next;
        if step <= RICCATI_TOL {
            let k = gain_for(&p, a, b, r)?;
            let cost = p.trace();
            return Ok((Policy::new(k)?, cost));
        }
    }
    Err(Error::NonStabilizable {
        iterations: RICCATI_MAX_ITERS,
    })
}

fn gain_for(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let lhs = r + &bt_p * b;
    let rhs = &bt_p * a;
    lhs.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::Numerical {
            context: "Riccati gain solve",
            residual: f64::INFINITY,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{exact_cost, oracle_gradient};
    use approx::assert_relative_eq;

    #[test]
    fn zero_state_matrix_is_open_loop_optimal() {
        let sys = LtiSystem::new(DMatrix::zeros(3, 3), DMatrix::from_element(3, 1, 1.0)).unwrap();
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let spec = LqrCostSpec::new(q, DMatrix::identity(1, 1), 1.0).unwrap();
        let (k, j) = optimal_lqr(&sys, &spec).unwrap();
        assert!(k.gain().norm() < 1e-14);
        assert_relative_eq!(j, 6.0, max_relative = 1e-14);
    }

    // Fixed point of P = 1 + 4P/(1+P) by bisection on [1, 10].
    fn scalar_riccati_root() -> f64 {
        let f = |p: f64| 1.0 + 4.0 * p / (1.0 + p) - p;
        let (mut lo, mut hi) = (1.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_riccati_root_matches() {
        let root = scalar_riccati_root();
        assert_relative_eq!(root, 2.0 + 5f64.sqrt(), max_relative = 1e-12);
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let spec = LqrCostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 1.0).unwrap();
        let (k, j) = optimal_lqr(&sys, &spec).unwrap();
        assert_relative_eq!(j, root, max_relative = 1e-9);
        assert_relative_eq!(
            k.gain()[(0, 0)],
            2.0 * root / (1.0 + root),
            max_relative = 1e-9
        );
        assert_relative_eq!(exact_cost(&sys, &k, &spec).unwrap(), j, max_relative = 1e-8);
    }

    #[test]
    fn optimum_has_zero_gradient() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 1.5]),
            DMatrix::from_row_slice(2, 1, &[2.0, 2.0]),
        )
        .unwrap();
        for gamma in [0.01, 0.3, 1.0] {
            let spec = LqrCostSpec::new(
                DMatrix::identity(2, 2),
                DMatrix::from_element(1, 1, 2.0),
                gamma,
            )
            .unwrap();
            let (k, j) = optimal_lqr(&sys, &spec).unwrap();
            let g = oracle_gradient(&sys, &k, &spec).unwrap();
            assert!(g.norm() < 1e-8, "gradient {} at gamma {gamma}", g.norm());
            assert_relative_eq!(exact_cost(&sys, &k, &spec).unwrap(), j, max_relative = 1e-8);
        }
    }

    #[test]
    fn unstabilizable_is_reported() {
        // unstable mode the input cannot reach
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let spec = LqrCostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 1.0).unwrap();
        assert!(matches!(
            optimal_lqr(&sys, &spec),
            Err(Error::NonStabilizable { .. })
        ));
    }
}
