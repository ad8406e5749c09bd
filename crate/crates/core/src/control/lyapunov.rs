use nalgebra::{DMatrix, DVector};

use super::{is_gamma_stable, spectral_radius, LqrCostSpec, LtiSystem, Policy, MARGIN_EPS};
use crate::error::{Error, Result};

/// Largest state dimension solved through the Kronecker-vectorized system.
/// Above it the squared Smith (doubling) iteration is used.
pub const KRON_MAX_DIM: usize = 32;

const RESIDUAL_TOL: f64 = 1e-10;
const DOUBLING_MAX_ITERS: usize = 200;

/// Value matrix, state covariance and cost of a fixed gain under a discount.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSolution {
    /// `P = Q + K^T R K + gamma (A-BK)^T P (A-BK)`.
    pub p: DMatrix<f64>,
    /// Discounted state covariance `Sigma = I + gamma (A-BK) Sigma (A-BK)^T`.
    pub sigma: DMatrix<f64>,
    /// `Tr(P)`.
    pub cost: f64,
}

/// Solves `X = W + gamma * M^T X M` for `X`.
///
/// Requires `sqrt(gamma) * rho(M) < 1`; `gamma = 0` returns `W`.
pub fn discounted_lyapunov(m: &DMatrix<f64>, w: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() || w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension {
            context: "Lyapunov operands",
            expected: format!("{n}x{n}"),
            got: format!(
                "M {}x{}, W {}x{}",
                m.nrows(),
                m.ncols(),
                w.nrows(),
                w.ncols()
            ),
        });
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!(
            "discount factor {gamma} must be non-negative"
        )));
    }
    if gamma == 0.0 {
        return Ok(w.clone());
    }
    let scaled_radius = gamma.sqrt() * spectral_radius(m)?;
    if !(scaled_radius < 1.0 - MARGIN_EPS) {
        return Err(Error::Infeasible { scaled_radius });
    }

    let x = if n <= KRON_MAX_DIM {
        kron_solve(m, w, gamma)?
    } else {
        doubling_solve(m, w, gamma)
    };
    let x = (&x + x.transpose()) * 0.5;

    let residual = lyapunov_residual(m, w, gamma, &x);
    if !(residual <= RESIDUAL_TOL * (1.0 + x.norm())) {
        return Err(Error::Numerical {
            context: "discounted Lyapunov solve",
            residual,
        });
    }
    Ok(x)
}

/// `||X - W - gamma M^T X M||_F`.
pub(crate) fn lyapunov_residual(
    m: &DMatrix<f64>,
    w: &DMatrix<f64>,
    gamma: f64,
    x: &DMatrix<f64>,
) -> f64 {
    (x - w - m.transpose() * x * m * gamma).norm()
}

// vec(M^T X M) = (M^T (x) M^T) vec(X) with column-major vec.
fn kron_solve(m: &DMatrix<f64>, w: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let nn = n * n;
    let mut lhs = DMatrix::<f64>::identity(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for l in 0..n {
                let mlj = m[(l, j)];
                if mlj == 0.0 {
                    continue;
                }
                for k in 0..n {
                    lhs[(row, k + l * n)] -= gamma * m[(k, i)] * mlj;
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(w.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or(Error::Numerical {
        context: "vectorized Lyapunov system is singular",
        residual: f64::INFINITY,
    })?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

// X = sum_t gamma^t (M^t)^T W M^t, summed by repeated squaring.
fn doubling_solve(m: &DMatrix<f64>, w: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut x = w.clone();
    let mut a = m * gamma.sqrt();
    for _ in 0..DOUBLING_MAX_ITERS {
        let incr = a.transpose() * &x * &a;
        let done = incr.norm() <= f64::EPSILON * x.norm();
        x += incr;
        if done {
            break;
        }
        a = &a * &a;
    }
    x
}

/// Value matrix and discounted covariance of `K` for the given cost.
pub fn solve_discounted_lyapunov(
    sys: &LtiSystem,
    pol: &Policy,
    spec: &LqrCostSpec,
) -> Result<LyapunovSolution> {
    spec.check_dims(sys)?;
    let closed = sys.closed_loop(pol)?;
    let gamma = spec.gamma();
    let p = discounted_lyapunov(&closed, &spec.stage_weight(pol), gamma)?;
    let n = sys.state_dim();
    let sigma = discounted_lyapunov(&closed.transpose(), &DMatrix::identity(n, n), gamma)?;
    let cost = p.trace();
    Ok(LyapunovSolution { p, sigma, cost })
}

/// `J_gamma(K) = Tr(P)`, or `+inf` when the damped closed loop is unstable.
pub fn exact_cost(sys: &LtiSystem, pol: &Policy, spec: &LqrCostSpec) -> Result<f64> {
    spec.check_dims(sys)?;
    if !is_gamma_stable(sys, pol, spec.gamma())? {
        return Ok(f64::INFINITY);
    }
    let closed = sys.closed_loop(pol)?;
    let p = discounted_lyapunov(&closed, &spec.stage_weight(pol), spec.gamma())?;
    Ok(p.trace())
}

/// Cost under additive unit-covariance noise from `x0 = 0`: `gamma/(1-gamma) Tr(P)`.
/// `+inf` when unstable; undefined at `gamma = 1`.
pub fn exact_cost_noisy(sys: &LtiSystem, pol: &Policy, spec: &LqrCostSpec) -> Result<f64> {
    let gamma = spec.gamma();
    if gamma >= 1.0 {
        return Err(Error::Domain("noisy cost is undefined at gamma = 1".into()));
    }
    let base = exact_cost(sys, pol, spec)?;
    Ok(gamma / (1.0 - gamma) * base)
}

/// Closed-form policy gradient `2 [(R + gamma B^T P B) K - gamma B^T P A] Sigma`.
pub fn oracle_gradient(sys: &LtiSystem, pol: &Policy, spec: &LqrCostSpec) -> Result<DMatrix<f64>> {
    let sol = solve_discounted_lyapunov(sys, pol, spec)?;
    let gamma = spec.gamma();
    let (a, b, k) = (sys.a(), sys.b(), pol.gain());
    let bt_p = b.transpose() * &sol.p;
    let lhs = (spec.r() + &bt_p * b * gamma) * k - &bt_p * a * gamma;
    Ok(lhs * &sol.sigma * 2.0)
}
