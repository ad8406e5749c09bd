//! Sample paths: initial-state and noise draws, truncated rollout costs for
//! linear, noisy and nonlinear plants, and the cart-pole model.

mod cartpole;
mod dist;

pub use cartpole::{cartpole_step, CartPole, CartPoleParams};
pub use dist::{InitKind, InitialStateDist, NoiseDist, NoiseKind};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{LqrCostSpec, LtiSystem, Policy};
use crate::error::{Error, Result};

/// State norm beyond which a rollout is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e150;

/// Sampling and optimization knobs shared by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    /// Rollout horizon.
    pub horizon: usize,
    /// Rollouts per cost evaluation.
    pub eval_batch: usize,
    /// Perturbation pairs per gradient estimate.
    pub grad_batch: usize,
    pub smoothing_radius: f64,
    pub step_size: f64,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.eval_batch == 0 || self.grad_batch == 0 {
            return Err(Error::Config(
                "horizon, eval_batch and grad_batch must be at least 1".into(),
            ));
        }
        if !(self.smoothing_radius > 0.0 && self.smoothing_radius.is_finite()) {
            return Err(Error::Config("smoothing_radius must be positive".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            eval_batch: 20,
            grad_batch: 20,
            smoothing_radius: 2e-3,
            step_size: 1e-3,
            seed: 0,
        }
    }
}

type StepFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Discrete-time plant `x' = f(x, u)` with an equilibrium at the origin.
#[derive(Clone)]
pub struct NonlinearSystem {
    step: Arc<StepFn>,
    state_dim: usize,
    input_dim: usize,
}

impl std::fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

impl NonlinearSystem {
    pub fn new<F>(state_dim: usize, input_dim: usize, step: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let origin = step(&DVector::zeros(state_dim), &DVector::zeros(input_dim));
        if origin.len() != state_dim {
            return Err(Error::Dimension {
                context: "nonlinear step output",
                expected: state_dim.to_string(),
                got: origin.len().to_string(),
            });
        }
        if !(origin.norm() <= 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "origin is not an equilibrium: |f(0, 0)| = {:e}",
                origin.norm()
            )));
        }
        Ok(Self {
            step: Arc::new(step),
            state_dim,
            input_dim,
        })
    }

    /// Wraps a linear plant as `f(x, u) = A x + B u`.
    pub fn from_linear(sys: &LtiSystem) -> Self {
        let (a, b) = (sys.a().clone(), sys.b().clone());
        Self {
            step: Arc::new(move |x, u| &a * x + &b * u),
            state_dim: sys.state_dim(),
            input_dim: sys.input_dim(),
        }
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.step)(x, u)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Undamped closed-loop state after `steps` steps; `None` if it diverged.
    pub fn simulate_closed_loop(
        &self,
        pol: &Policy,
        x0: &DVector<f64>,
        steps: usize,
    ) -> Option<DVector<f64>> {
        let mut x = x0.clone();
        for _ in 0..steps {
            let u = -(pol.gain() * &x);
            x = self.step(&x, &u);
            if diverged(&x) {
                return None;
            }
        }
        Some(x)
    }
}

fn diverged(x: &DVector<f64>) -> bool {
    let norm = x.norm();
    !(norm <= DIVERGENCE_NORM)
}

fn check_state(x: &DVector<f64>, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension {
            context: "state vector",
            expected: n.to_string(),
            got: x.len().to_string(),
        });
    }
    Ok(())
}

// Discounted truncated cost of x' = M x + w_t with stage weight W.
//
// Propagates y_t = gamma^{t/2} x_t, which has the same cost and stays bounded
// whenever sqrt(gamma) M is stable.
fn linear_cost(
    closed: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    gamma: f64,
    x0: &DVector<f64>,
    noise: Option<&[DVector<f64>]>,
    horizon: usize,
) -> f64 {
    let n = x0.len();
    let root = gamma.sqrt();
    let mut y = x0.clone();
    let mut next = DVector::zeros(n);
    let mut wy = DVector::zeros(n);
    let mut noise_gain = 1.0;
    let mut total = 0.0;
    for t in 0..horizon {
        wy.gemv(1.0, weight, &y, 0.0);
        total += y.dot(&wy);
        if t + 1 == horizon {
            break;
        }
        next.gemv(root, closed, &y, 0.0);
        if let Some(w) = noise {
            noise_gain *= root;
            next.axpy(noise_gain, &w[t], 1.0);
        }
        std::mem::swap(&mut y, &mut next);
        if diverged(&y) {
            return f64::INFINITY;
        }
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Discounted truncated costs of many rollouts of one linear plant, column `j`
/// using gain `K + D_j` from `x0_j`; matches [`linear_cost`] column by column.
///
/// All columns advance together through the shared `A - BK`; each column adds
/// only its own `-B D_j y_j`. Diverged columns are frozen at zero and cost `+inf`.
fn linear_costs_batch(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    offsets: &[&DMatrix<f64>],
    gamma: f64,
    x0: &[&DVector<f64>],
    horizon: usize,
) -> Vec<f64> {
    let (n, m, cols) = (sys.state_dim(), sys.input_dim(), x0.len());
    let root = gamma.sqrt();
    let closed = sys.a() - sys.b() * gain;
    let mut y = DMatrix::zeros(n, cols);
    for (j, x) in x0.iter().enumerate() {
        y.set_column(j, x);
    }
    let mut next = DMatrix::zeros(n, cols);
    let mut qy = DMatrix::zeros(n, cols);
    let mut u = DMatrix::zeros(m, cols);
    let mut ru = DMatrix::zeros(m, cols);
    let mut v = DMatrix::zeros(m, cols);
    let mut total = vec![0.0; cols];
    let mut alive = vec![true; cols];
    let q_identity = *q == DMatrix::identity(n, n);
    for t in 0..horizon {
        {
            let (ys, vs) = (y.as_slice(), v.as_mut_slice());
            for j in 0..cols {
                let (d, yj, vj) = (
                    offsets[j].as_slice(),
                    &ys[j * n..(j + 1) * n],
                    &mut vs[j * m..(j + 1) * m],
                );
                vj.fill(0.0);
                for (k, &yk) in yj.iter().enumerate() {
                    for (vi, &dik) in vj.iter_mut().zip(&d[k * m..(k + 1) * m]) {
                        *vi += dik * yk;
                    }
                }
            }
        }
        u.gemm(1.0, gain, &y, 0.0);
        u += &v;
        if !q_identity {
            qy.gemm(1.0, q, &y, 0.0);
        }
        ru.gemm(1.0, r, &u, 0.0);
        {
            let (ys, qs, us, rus) = (y.as_slice(), qy.as_slice(), u.as_slice(), ru.as_slice());
            for j in 0..cols {
                if !alive[j] {
                    continue;
                }
                let yj = &ys[j * n..(j + 1) * n];
                let state: f64 = if q_identity {
                    yj.iter().map(|a| a * a).sum()
                } else {
                    yj.iter()
                        .zip(&qs[j * n..(j + 1) * n])
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let input: f64 = us[j * m..(j + 1) * m]
                    .iter()
                    .zip(&rus[j * m..(j + 1) * m])
                    .map(|(a, b)| a * b)
                    .sum();
                total[j] += state + input;
            }
        }
        if t + 1 == horizon {
            break;
        }
        next.gemm(root, &closed, &y, 0.0);
        next.gemm(-root, sys.b(), &v, 1.0);
        std::mem::swap(&mut y, &mut next);
        let ys = y.as_mut_slice();
        for j in 0..cols {
            let yj = &mut ys[j * n..(j + 1) * n];
            if alive[j] && !(yj.iter().map(|a| a * a).sum::<f64>().sqrt() <= DIVERGENCE_NORM) {
                alive[j] = false;
            }
            if !alive[j] {
                yj.fill(0.0);
            }
        }
    }
    total
        .into_iter()
        .zip(alive)
        .map(|(c, ok)| {
            if ok && c.is_finite() {
                c
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// `sum_{t<horizon} gamma^t (x'Qx + u'Ru)` along `x' = (A - BK) x`.
pub fn rollout_cost_linear(
    sys: &LtiSystem,
    pol: &Policy,
    spec: &LqrCostSpec,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<f64> {
    spec.check_dims(sys)?;
    check_state(x0, sys.state_dim())?;
    let closed = sys.closed_loop(pol)?;
    Ok(linear_cost(
        &closed,
        &spec.stage_weight(pol),
        spec.gamma(),
        x0,
        None,
        horizon,
    ))
}

/// Same cost from `x0 = 0` under `x' = (A - BK) x + w_t`.
pub fn rollout_cost_noisy(
    sys: &LtiSystem,
    pol: &Policy,
    spec: &LqrCostSpec,
    noise: &[DVector<f64>],
    horizon: usize,
) -> Result<f64> {
    spec.check_dims(sys)?;
    if noise.len() < horizon {
        return Err(Error::InvalidArgument(format!(
            "noise sequence of length {} too short for horizon {horizon}",
            noise.len()
        )));
    }
    for w in noise {
        check_state(w, sys.state_dim())?;
    }
    let closed = sys.closed_loop(pol)?;
    let x0 = DVector::zeros(sys.state_dim());
    Ok(linear_cost(
        &closed,
        &spec.stage_weight(pol),
        spec.gamma(),
        &x0,
        Some(noise),
        horizon,
    ))
}

/// Undiscounted stage costs along the damped map `x' = sqrt(gamma) f(x, -Kx)`.
pub fn rollout_cost_nonlinear(
    nl: &NonlinearSystem,
    pol: &Policy,
    spec: &LqrCostSpec,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<f64> {
    check_state(x0, nl.state_dim())?;
    if pol.state_dim() != nl.state_dim() || pol.input_dim() != nl.input_dim() {
        return Err(Error::Dimension {
            context: "policy gain",
            expected: format!("{}x{}", nl.input_dim(), nl.state_dim()),
            got: format!("{}x{}", pol.input_dim(), pol.state_dim()),
        });
    }
    if spec.q().nrows() != nl.state_dim() || spec.r().nrows() != nl.input_dim() {
        return Err(Error::Dimension {
            context: "cost penalties",
            expected: format!("Q {0}x{0}, R {1}x{1}", nl.state_dim(), nl.input_dim()),
            got: format!("Q {0}x{0}, R {1}x{1}", spec.q().nrows(), spec.r().nrows()),
        });
    }
    Ok(nonlinear_cost(
        nl,
        pol,
        spec.q(),
        spec.r(),
        spec.gamma(),
        x0,
        horizon,
    ))
}

fn nonlinear_cost(
    nl: &NonlinearSystem,
    pol: &Policy,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    x0: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let damping = gamma.sqrt();
    let mut x = x0.clone();
    let mut total = 0.0;
    for t in 0..horizon {
        let u = -(pol.gain() * &x);
        total += x.dot(&(q * &x)) + u.dot(&(r * &u));
        if t + 1 == horizon {
            break;
        }
        x = nl.step(&x, &u) * damping;
        if diverged(&x) {
            return f64::INFINITY;
        }
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// A black-box plant seen only through rollout costs.
///
/// A scenario is the randomness of one rollout (an initial state or a noise
/// sequence); the two rollouts of a gradient pair can share it.
pub trait RolloutEnv: Sync {
    type Scenario: Send + Sync;

    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn sample_scenario(&self, rng: &mut ChaCha8Rng, horizon: usize) -> Self::Scenario;
    fn cost(&self, pol: &Policy, gamma: f64, scenario: &Self::Scenario, horizon: usize) -> f64;

    /// Whether both rollouts of a gradient pair reuse one scenario.
    fn pair_shares_scenario(&self) -> bool {
        true
    }

    /// Cost of gain `K + offsets[j]` on `scenarios[j]` for every `j`.
    /// Implementations may batch the rollouts.
    fn costs_at_offsets(
        &self,
        pol: &Policy,
        offsets: &[&DMatrix<f64>],
        gamma: f64,
        scenarios: &[&Self::Scenario],
        horizon: usize,
    ) -> Vec<f64> {
        offsets
            .iter()
            .zip(scenarios)
            .map(|(d, s)| self.cost(&pol.offset(d, 1.0), gamma, s, horizon))
            .collect()
    }
}

/// Deterministic linear plant with random initial states.
#[derive(Debug, Clone)]
pub struct LinearEnv {
    pub sys: LtiSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub init: InitialStateDist,
}

impl RolloutEnv for LinearEnv {
    type Scenario = DVector<f64>;

    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn sample_scenario(&self, rng: &mut ChaCha8Rng, _horizon: usize) -> DVector<f64> {
        self.init.sample(rng)
    }

    fn cost(&self, pol: &Policy, gamma: f64, x0: &DVector<f64>, horizon: usize) -> f64 {
        let closed = self.sys.a() - self.sys.b() * pol.gain();
        let weight = &self.q + pol.gain().transpose() * &self.r * pol.gain();
        linear_cost(&closed, &weight, gamma, x0, None, horizon)
    }

    fn costs_at_offsets(
        &self,
        pol: &Policy,
        offsets: &[&DMatrix<f64>],
        gamma: f64,
        scenarios: &[&DVector<f64>],
        horizon: usize,
    ) -> Vec<f64> {
        linear_costs_batch(
            &self.sys,
            &self.q,
            &self.r,
            pol.gain(),
            offsets,
            gamma,
            scenarios,
            horizon,
        )
    }
}

/// Linear plant driven by additive noise from the origin.
#[derive(Debug, Clone)]
pub struct NoisyEnv {
    pub sys: LtiSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub noise: NoiseDist,
    /// Reuse one noise realization for both rollouts of a gradient pair.
    pub common_noise: bool,
}

impl RolloutEnv for NoisyEnv {
    type Scenario = Vec<DVector<f64>>;

    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn sample_scenario(&self, rng: &mut ChaCha8Rng, horizon: usize) -> Vec<DVector<f64>> {
        (0..horizon).map(|_| self.noise.sample(rng)).collect()
    }

    fn cost(&self, pol: &Policy, gamma: f64, noise: &Vec<DVector<f64>>, horizon: usize) -> f64 {
        let closed = self.sys.a() - self.sys.b() * pol.gain();
        let weight = &self.q + pol.gain().transpose() * &self.r * pol.gain();
        let x0 = DVector::zeros(self.sys.state_dim());
        linear_cost(&closed, &weight, gamma, &x0, Some(noise), horizon)
    }

    fn pair_shares_scenario(&self) -> bool {
        self.common_noise
    }
}

/// Nonlinear plant accessed through its damped simulator.
#[derive(Debug, Clone)]
pub struct NonlinearEnv {
    pub nl: NonlinearSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub init: InitialStateDist,
}

impl RolloutEnv for NonlinearEnv {
    type Scenario = DVector<f64>;

    fn state_dim(&self) -> usize {
        self.nl.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.nl.input_dim()
    }

    fn sample_scenario(&self, rng: &mut ChaCha8Rng, _horizon: usize) -> DVector<f64> {
        self.init.sample(rng)
    }

    fn cost(&self, pol: &Policy, gamma: f64, x0: &DVector<f64>, horizon: usize) -> f64 {
        nonlinear_cost(&self.nl, pol, &self.q, &self.r, gamma, x0, horizon)
    }
}
