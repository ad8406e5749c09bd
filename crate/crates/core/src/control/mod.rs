//! Exact, model-based computations for the discounted LQR.
//!
//! Everything here needs the plant matrices. The sample-based layers never
//! call into this module during a run; it exists to certify them.

mod lyapunov;
mod riccati;

pub use lyapunov::{
    discounted_lyapunov, exact_cost, exact_cost_noisy, oracle_gradient, solve_discounted_lyapunov,
    LyapunovSolution, KRON_MAX_DIM,
};
pub use riccati::{optimal_lqr, RICCATI_MAX_ITERS, RICCATI_TOL};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Slack used when testing the strict inequality `sqrt(gamma) * rho < 1`.
pub const MARGIN_EPS: f64 = 1e-12;

/// Iteration budget for the real Schur decomposition behind [`spectral_radius`].
const SCHUR_MAX_ITERS: usize = 10_000;

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite(what))
    }
}

/// Linear time-invariant plant `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(Error::Dimension {
                context: "state matrix",
                expected: "non-empty square".into(),
                got: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension {
                context: "input matrix",
                expected: format!("{}xm with m >= 1", a.nrows()),
                got: format!("{}x{}", b.nrows(), b.ncols()),
            });
        }
        check_finite(&a, "state matrix")?;
        check_finite(&b, "input matrix")?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`.
    pub fn closed_loop(&self, pol: &Policy) -> Result<DMatrix<f64>> {
        self.check_policy(pol)?;
        Ok(&self.a - &self.b * pol.gain())
    }

    /// The plant scaled by `sqrt(gamma)`.
    pub fn damped(&self, gamma: f64) -> Self {
        let s = gamma.sqrt();
        Self {
            a: &self.a * s,
            b: &self.b * s,
        }
    }

    pub fn check_policy(&self, pol: &Policy) -> Result<()> {
        let k = pol.gain();
        if k.nrows() != self.input_dim() || k.ncols() != self.state_dim() {
            return Err(Error::Dimension {
                context: "policy gain",
                expected: format!("{}x{}", self.input_dim(), self.state_dim()),
                got: format!("{}x{}", k.nrows(), k.ncols()),
            });
        }
        Ok(())
    }
}

/// Static state feedback `u = -K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    k: DMatrix<f64>,
}

impl Policy {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        check_finite(&k, "policy gain")?;
        Ok(Self { k })
    }

    pub fn zeros(input_dim: usize, state_dim: usize) -> Self {
        Self {
            k: DMatrix::zeros(input_dim, state_dim),
        }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn input_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.k.ncols()
    }

    /// `K + scale * dir`, without the finiteness check.
    pub fn offset(&self, dir: &DMatrix<f64>, scale: f64) -> Self {
        Self {
            k: &self.k + dir * scale,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.k.iter().all(|v| v.is_finite())
    }
}

/// Penalties and discount of the discounted LQR objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrCostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    gamma: f64,
}

impl LqrCostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, gamma: f64) -> Result<Self> {
        for (m, what) in [(&q, "state penalty"), (&r, "input penalty")] {
            if m.nrows() == 0 || !m.is_square() {
                return Err(Error::Dimension {
                    context: what,
                    expected: "non-empty square".into(),
                    got: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            check_finite(m, what)?;
            if min_eigenvalue_sym(m) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{what} must be positive definite"
                )));
            }
        }
        let spec = Self { q, r, gamma: 1.0 };
        spec.with_gamma(gamma)
    }

    /// Same penalties, new discount factor in `(0, 1]`.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!(
                "discount factor {gamma} not in (0, 1]"
            )));
        }
        Ok(Self {
            q: self.q.clone(),
            r: self.r.clone(),
            gamma,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Stage weight `Q + K^T R K`.
    pub fn stage_weight(&self, pol: &Policy) -> DMatrix<f64> {
        let k = pol.gain();
        &self.q + k.transpose() * &self.r * k
    }

    /// Smallest eigenvalue of `Q + K^T R K`.
    pub fn sigma_min_stage(&self, pol: &Policy) -> f64 {
        min_eigenvalue_sym(&self.stage_weight(pol))
    }

    pub fn sigma_min_q(&self) -> f64 {
        min_eigenvalue_sym(&self.q)
    }

    pub(crate) fn check_dims(&self, sys: &LtiSystem) -> Result<()> {
        if self.q.nrows() != sys.state_dim() || self.r.nrows() != sys.input_dim() {
            return Err(Error::Dimension {
                context: "cost penalties",
                expected: format!("Q {0}x{0}, R {1}x{1}", sys.state_dim(), sys.input_dim()),
                got: format!("Q {0}x{0}, R {1}x{1}", self.q.nrows(), self.r.nrows()),
            });
        }
        Ok(())
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "spectral radius",
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    check_finite(m, "spectral radius input")?;
    match m.nrows() {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        _ => {
            let schur = m
                .clone()
                .try_schur(f64::EPSILON, SCHUR_MAX_ITERS)
                .ok_or_else(|| Error::Numerical {
                    context: "Schur decomposition",
                    residual: gelfand_estimate(m),
                })?;
            Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max))
        }
    }
}

// ||M^64||^(1/64): only reported alongside a failed eigen solve.
fn gelfand_estimate(m: &DMatrix<f64>) -> f64 {
    let mut p = m.clone();
    let mut log_scale = 0.0;
    for _ in 0..6 {
        p = &p * &p;
        let norm = p.norm();
        if norm == 0.0 {
            return 0.0;
        }
        p /= norm;
        log_scale = 2.0 * log_scale + norm.ln();
    }
    (log_scale / 64.0).exp()
}

/// `sqrt(gamma) * rho(A - BK) < 1 - MARGIN_EPS`.
pub fn is_gamma_stable(sys: &LtiSystem, pol: &Policy, gamma: f64) -> Result<bool> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "discount factor {gamma} must be positive"
        )));
    }
    let rho = spectral_radius(&sys.closed_loop(pol)?)?;
    Ok(gamma.sqrt() * rho < 1.0 - MARGIN_EPS)
}

/// The largest discount the closed loop tolerates, `1 / rho(A - BK)^2`.
pub fn max_stable_gamma(sys: &LtiSystem, pol: &Policy) -> Result<f64> {
    let rho = spectral_radius(&sys.closed_loop(pol)?)?;
    Ok(if rho == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (rho * rho)
    })
}

/// Stability-margin update rate from the exact cost:
/// `alpha = s / (J - s)` with `s` the smallest eigenvalue of `Q + K^T R K`.
///
/// Any discount `gamma' < (1 + alpha) gamma` keeps the same gain stable. Apply
/// it with a safety factor below one; at factor one the bound can be tight.
pub fn margin_alpha_exact(cost: f64, pol: &Policy, spec: &LqrCostSpec) -> Result<f64> {
    rate_from_sigma(cost, spec.sigma_min_stage(pol))
}

/// The variant that only uses `Q`; never larger than [`margin_alpha_exact`].
pub fn margin_alpha_conservative(cost: f64, spec: &LqrCostSpec) -> Result<f64> {
    rate_from_sigma(cost, spec.sigma_min_q())
}

fn rate_from_sigma(cost: f64, sigma: f64) -> Result<f64> {
    if !cost.is_finite() {
        return Err(Error::Domain(format!("cost {cost} must be finite")));
    }
    if cost <= sigma {
        return Err(Error::Degenerate(format!(
            "cost {cost} does not exceed smallest stage eigenvalue {sigma}"
        )));
    }
    Ok(sigma / (cost - sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_dim_plant() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 1.5]),
            DMatrix::from_row_slice(2, 1, &[2.0, 2.0]),
        )
        .unwrap()
    }

    #[test]
    fn spectral_radius_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 1.5]);
        assert_relative_eq!(spectral_radius(&a).unwrap(), 6.0, max_relative = 1e-10);
        assert_relative_eq!(
            spectral_radius(&DMatrix::identity(3, 3)).unwrap(),
            1.0,
            max_relative = 1e-10
        );
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nil).unwrap().abs() < 1e-12);
        // rotation: complex pair of modulus 0.5
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.5, max_relative = 1e-10);
    }

    #[test]
    fn spectral_radius_rejects_rectangular() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(spectral_radius(&m), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gamma_stability_examples() {
        let sys = two_dim_plant();
        let k = Policy::zeros(1, 2);
        assert!(is_gamma_stable(&sys, &k, 1e-3).unwrap());
        assert!(!is_gamma_stable(&sys, &k, 1.0).unwrap());
        // right at the boundary: 1/36 gives sqrt(gamma)*rho = 1
        assert!(!is_gamma_stable(&sys, &k, 1.0 / 36.0).unwrap());
        assert!(is_gamma_stable(&sys, &k, 1e-9).unwrap());
        let bad = Policy::zeros(2, 2);
        assert!(matches!(
            is_gamma_stable(&sys, &bad, 0.1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn constructors_validate() {
        assert!(LtiSystem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
        assert!(LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        assert!(matches!(
            LtiSystem::new(a, DMatrix::zeros(2, 1)),
            Err(Error::NotFinite(_))
        ));
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        assert!(LqrCostSpec::new(q.clone(), r.clone(), 0.0).is_err());
        assert!(LqrCostSpec::new(q.clone(), r.clone(), 1.5).is_err());
        assert!(LqrCostSpec::new(q.clone(), r.clone(), 1.0).is_ok());
        let semidef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(LqrCostSpec::new(semidef, r, 0.5).is_err());
    }

    #[test]
    fn margin_alpha_examples() {
        let spec = LqrCostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), 0.2).unwrap();
        let k = Policy::zeros(1, 1);
        let alpha = margin_alpha_exact(5.0, &k, &spec).unwrap();
        assert_relative_eq!(alpha, 0.25, max_relative = 1e-14);
        let gamma_next = (1.0 + 0.5 * alpha) * 0.2;
        assert_relative_eq!(gamma_next, 0.225, max_relative = 1e-14);
        assert!(gamma_next.sqrt() * 2.0 < 1.0);

        assert!(margin_alpha_exact(1e12, &k, &spec).unwrap() < 1e-11);
        assert!(matches!(
            margin_alpha_exact(1.0, &k, &spec),
            Err(Error::Degenerate(_))
        ));
        assert!(margin_alpha_exact(f64::INFINITY, &k, &spec).is_err());
    }

    #[test]
    fn conservative_rate_is_smaller() {
        let spec = LqrCostSpec::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DMatrix::identity(1, 1) * 3.0,
            0.5,
        )
        .unwrap();
        let k = Policy::new(DMatrix::from_row_slice(1, 2, &[0.7, -1.2])).unwrap();
        let cost = 40.0;
        let exact = margin_alpha_exact(cost, &k, &spec).unwrap();
        let cons = margin_alpha_conservative(cost, &spec).unwrap();
        assert!(cons <= exact);
    }
}
