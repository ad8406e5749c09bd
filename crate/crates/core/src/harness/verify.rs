//! Randomized property suites over the exact oracles, run by `verify`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{
    exact_cost, is_gamma_stable, margin_alpha_exact, max_stable_gamma, min_eigenvalue_sym,
    optimal_lqr, oracle_gradient, solve_discounted_lyapunov, LqrCostSpec, LtiSystem, Policy,
};
use crate::error::Result;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest error, or smallest margin for suites that need a positive value.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

/// A random plant, gain, penalties and a discount under which the gain is stable.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sys: LtiSystem,
    pub pol: Policy,
    pub spec: LqrCostSpec,
}

fn gauss(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = gauss(rng, n, n);
    &l * l.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// Draws an instance with `n <= max_dim` and a discount at a random fraction
/// in `[0.2, 0.9]` of the largest stable one, capped at 1.
pub fn random_instance(rng: &mut ChaCha8Rng, max_dim: usize) -> Result<Instance> {
    let n = rng.random_range(1..=max_dim);
    let m = rng.random_range(1..=n);
    let scale = rng.random_range(0.5..2.0) / (n as f64).sqrt();
    let sys = LtiSystem::new(gauss(rng, n, n) * scale, gauss(rng, n, m))?;
    let pol = Policy::new(gauss(rng, m, n) * 0.3)?;
    let frac: f64 = rng.random_range(0.2..0.9);
    let gamma = (frac * max_stable_gamma(&sys, &pol)?).min(1.0);
    let spec = LqrCostSpec::new(random_pd(rng, n), random_pd(rng, m), gamma)?;
    Ok(Instance { sys, pol, spec })
}

fn run_suite<F>(
    name: &'static str,
    seed: u64,
    tag: u64,
    cases: usize,
    tolerance: f64,
    lower_is_worse: bool,
    case: F,
) -> Result<SuiteReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let key = StreamKey::new(seed).child(tag);
    let values = (0..cases as u64)
        .into_par_iter()
        .map(|i| case(&mut key.stream(i)))
        .collect::<Result<Vec<f64>>>()?;
    let (failures, worst) = if lower_is_worse {
        (
            values.iter().filter(|v| !(**v > tolerance)).count(),
            values.iter().copied().fold(f64::INFINITY, f64::min),
        )
    } else {
        (
            values.iter().filter(|v| !(**v <= tolerance)).count(),
            values.iter().copied().fold(0.0, f64::max),
        )
    };
    Ok(SuiteReport {
        name,
        cases,
        failures,
        worst,
        tolerance,
    })
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

/// Lyapunov residual, relative to `|P|`.
pub fn lyapunov_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    run_suite("lyapunov_residual", seed, 1, cases, 1e-10, false, |rng| {
        let inst = random_instance(rng, 4)?;
        let sol = solve_discounted_lyapunov(&inst.sys, &inst.pol, &inst.spec)?;
        let m = inst.sys.closed_loop(&inst.pol)?;
        let res = &sol.p
            - inst.spec.stage_weight(&inst.pol)
            - m.transpose() * &sol.p * &m * inst.spec.gamma();
        Ok(rel(res.norm(), sol.p.norm()))
    })
}

/// `Tr(P)` against `Tr((Q + K^T R K) Sigma)`.
pub fn cost_identity_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    run_suite("cost_identity", seed, 2, cases, 1e-8, false, |rng| {
        let inst = random_instance(rng, 4)?;
        let sol = solve_discounted_lyapunov(&inst.sys, &inst.pol, &inst.spec)?;
        let other = (inst.spec.stage_weight(&inst.pol) * &sol.sigma).trace();
        Ok((sol.cost - other).abs() / sol.cost.abs())
    })
}

/// Closed-form gradient against central differences of the exact cost.
pub fn gradient_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    run_suite("gradient_fd", seed, 3, cases, 1e-5, false, |rng| {
        let inst = random_instance(rng, 4)?;
        let g = oracle_gradient(&inst.sys, &inst.pol, &inst.spec)?;
        let h = 1e-6;
        let k = inst.pol.gain();
        let mut fd = DMatrix::zeros(k.nrows(), k.ncols());
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                let mut e = DMatrix::zeros(k.nrows(), k.ncols());
                e[(i, j)] = 1.0;
                let plus = exact_cost(&inst.sys, &inst.pol.offset(&e, h), &inst.spec)?;
                let minus = exact_cost(&inst.sys, &inst.pol.offset(&e, -h), &inst.spec)?;
                fd[(i, j)] = (plus - minus) / (2.0 * h);
            }
        }
        Ok((&fd - &g).norm() / g.norm().max(1e-12))
    })
}

/// After `gamma' = (1 + xi alpha) gamma` the gain stays stable, and
/// `Q + K^T R K - (1 - gamma / gamma') P` stays positive definite.
/// Reports the smallest eigenvalue of that matrix, or `-1` on a stability failure.
pub fn margin_suite(seed: u64, cases: usize, xi: f64) -> Result<SuiteReport> {
    let tag = 4 + (xi * 1000.0) as u64;
    run_suite("margin_update", seed, tag, cases, 0.0, true, |rng| {
        let inst = random_instance(rng, 4)?;
        let sol = solve_discounted_lyapunov(&inst.sys, &inst.pol, &inst.spec)?;
        let alpha = margin_alpha_exact(sol.cost, &inst.pol, &inst.spec)?;
        let gamma = inst.spec.gamma();
        let next = (1.0 + xi * alpha) * gamma;
        if !is_gamma_stable(&inst.sys, &inst.pol, next)? {
            return Ok(-1.0);
        }
        let lhs = inst.spec.stage_weight(&inst.pol) - &sol.p * (1.0 - gamma / next);
        Ok(min_eigenvalue_sym(&lhs))
    })
}

/// `J*_{g1} < J*_{g2}` for `g1 < g2`; reports the smallest relative gap.
pub fn monotonicity_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    run_suite("optimal_cost_monotone", seed, 5, cases, 0.0, true, |rng| {
        let inst = random_instance(rng, 4)?;
        let g1: f64 = rng.random_range(0.05..0.95);
        let g2: f64 = rng.random_range(g1 + 0.01..=1.0);
        let j1 = optimal_lqr(&inst.sys, &inst.spec.with_gamma(g1)?)?.1;
        let j2 = optimal_lqr(&inst.sys, &inst.spec.with_gamma(g2)?)?.1;
        Ok((j2 - j1) / j1)
    })
}

/// Case counts for `quick` and `full` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyMode {
    Quick,
    Full,
}

pub fn run_all(seed: u64, mode: VerifyMode) -> Result<Vec<SuiteReport>> {
    let (oracle, margin, mono) = match mode {
        VerifyMode::Quick => (20, 100, 20),
        VerifyMode::Full => (100, 1000, 200),
    };
    Ok(vec![
        lyapunov_suite(seed, oracle)?,
        cost_identity_suite(seed, oracle)?,
        gradient_suite(seed, oracle)?,
        margin_suite(seed, margin, 0.5)?,
        margin_suite(seed, margin, 0.9)?,
        monotonicity_suite(seed, mono)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass_and_repeat() {
        let a = run_all(11, VerifyMode::Quick).unwrap();
        for r in &a {
            assert!(r.passed(), "{r:?}");
        }
        assert_eq!(a, run_all(11, VerifyMode::Quick).unwrap());
    }

    #[test]
    fn instances_are_gamma_stable() {
        let mut rng = StreamKey::new(0).stream(0);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 4).unwrap();
            assert!(is_gamma_stable(&inst.sys, &inst.pol, inst.spec.gamma()).unwrap());
        }
    }
}
