//! Discount annealing: alternate policy-gradient steps on the discounted
//! problem with explicit increases of the discount factor until it reaches 1.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::{exact_cost, margin_alpha_exact, oracle_gradient, LqrCostSpec, Policy};
use crate::error::{Error, Result};
use crate::estimation::{estimate_cost, two_point_gradient};
use crate::rng::StreamKey;
use crate::simulator::{InitKind, LinearEnv, NoisyEnv, NonlinearEnv, RolloutConfig, RolloutEnv};

/// Consecutive inner-loop cost increases that trigger a warning.
pub const INCREASE_WARNING_RUN: usize = 5;
/// Halvings tried by the oracle line search before giving up on a step.
pub const MAX_BACKTRACKS: usize = 60;
/// Step halvings tried by the sampled step guard.
pub const MAX_GUARD_HALVINGS: usize = 10;

const TAG_GRAD: u64 = 0;
const TAG_EVAL: u64 = 1;
// inner steps use child keys 0, 1, ...; the retry takes the last one
const RETRY_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerMode {
    /// Step until the cost is below the threshold, at most `max_inner` steps.
    UntilThreshold { max_inner: usize },
    /// Exactly `count` gradient steps per discount update.
    FixedSteps { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Exact cost and gradient of a known linear plant.
    ExactOracle,
    Sampled,
    Noisy,
    Nonlinear,
}

/// How the nonlinear update rate rescales the cost by the initial-state box half-width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearRate {
    /// `sigma / (3 J / r_ini^2 - sigma)`: the box has covariance `r_ini^2 / 3`,
    /// so this reduces to the linear rate when `f` is linear.
    #[default]
    Variance,
    /// `sigma / (3 J / r_ini - sigma)`, scaling by the half-width itself.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingConfig {
    pub gamma0: f64,
    pub xi: f64,
    /// The cost threshold `D`.
    pub cost_threshold: f64,
    pub inner_mode: InnerMode,
    pub rollout: RolloutConfig,
    pub max_outer: usize,
    pub variant: Variant,
    #[serde(default)]
    pub nonlinear_rate: NonlinearRate,
    /// Sampled variants only: compare each evaluated step against the gain
    /// before it on the same initial states and halve the step until the
    /// estimate does not increase.
    #[serde(default)]
    pub step_guard: bool,
}

impl AnnealingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0 < 1.0) {
            return Err(Error::Config(format!(
                "gamma0 = {} must lie in (0, 1)",
                self.gamma0
            )));
        }
        let xi_max_ok = match self.variant {
            Variant::ExactOracle => self.xi < 1.0,
            _ => self.xi <= 1.0,
        };
        if !(self.xi > 0.0 && xi_max_ok) {
            return Err(Error::Config(format!(
                "xi = {} out of range for {:?} (exact oracle needs xi < 1)",
                self.xi, self.variant
            )));
        }
        if !(self.cost_threshold > 0.0 && self.cost_threshold.is_finite()) {
            return Err(Error::Config("cost_threshold must be positive".into()));
        }
        match self.inner_mode {
            InnerMode::UntilThreshold { max_inner: 0 } | InnerMode::FixedSteps { count: 0 } => {
                return Err(Error::Config("inner loop needs at least one step".into()));
            }
            _ => {}
        }
        if self.max_outer == 0 {
            return Err(Error::Config("max_outer must be at least 1".into()));
        }
        self.rollout.validate()
    }

    /// Threshold applied to the observed cost: `D` with an oracle, `D/2` on estimates.
    pub fn observed_threshold(&self) -> f64 {
        match self.variant {
            Variant::ExactOracle => self.cost_threshold,
            _ => 0.5 * self.cost_threshold,
        }
    }
}

/// The plant as the annealing loop sees it.
#[derive(Debug, Clone, Copy)]
pub enum Plant<'a> {
    /// Linear plant: exact oracle or sampled rollouts.
    Linear(&'a LinearEnv),
    Noisy(&'a NoisyEnv),
    Nonlinear(&'a NonlinearEnv),
}

impl Plant<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Plant::Linear(e) => (e.input_dim(), e.state_dim()),
            Plant::Noisy(e) => (e.input_dim(), e.state_dim()),
            Plant::Nonlinear(e) => (e.input_dim(), e.state_dim()),
        }
    }

    fn penalties(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Plant::Linear(e) => (&e.q, &e.r),
            Plant::Noisy(e) => (&e.q, &e.r),
            Plant::Nonlinear(e) => (&e.q, &e.r),
        }
    }

    pub fn check_variant(&self, variant: Variant) -> Result<()> {
        let ok = matches!(
            (self, variant),
            (Plant::Linear(_), Variant::ExactOracle | Variant::Sampled)
                | (Plant::Noisy(_), Variant::Noisy)
                | (Plant::Nonlinear(_), Variant::Nonlinear)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "variant {variant:?} does not match the plant kind"
            )))
        }
    }

    fn initial_box_half_width(&self) -> Option<f64> {
        match self {
            Plant::Nonlinear(e) => match e.init.kind {
                InitKind::UniformBox { half_width } => Some(half_width),
                _ => None,
            },
            _ => None,
        }
    }
}

fn rate_from(sigma: f64, scaled_cost: f64, context: &str) -> Result<f64> {
    if !scaled_cost.is_finite() {
        return Err(Error::Domain(format!(
            "{context}: cost estimate is not finite"
        )));
    }
    let den = scaled_cost - sigma;
    if den <= 0.0 {
        return Err(Error::Degenerate(format!(
            "{context}: denominator {den:.3e} <= 0 (cost estimate implausibly small)"
        )));
    }
    Ok(sigma / den)
}

/// `sigma / (2 J_hat - sigma)` with `sigma` the smallest eigenvalue of `Q + K'RK`.
pub fn update_rate_sampled(cost_hat: f64, pol: &Policy, spec: &LqrCostSpec) -> Result<f64> {
    rate_from(spec.sigma_min_stage(pol), 2.0 * cost_hat, "sampled rate")
}

/// `gamma sigma / (2 (1 - gamma) J_hat - gamma sigma)` for noise-driven costs.
pub fn update_rate_noisy(cost_hat: f64, pol: &Policy, spec: &LqrCostSpec) -> Result<f64> {
    let gamma = spec.gamma();
    if gamma >= 1.0 {
        return Err(Error::Domain(format!(
            "noisy rate needs gamma < 1, got {gamma}"
        )));
    }
    let sigma = gamma * spec.sigma_min_stage(pol);
    rate_from(sigma, 2.0 * (1.0 - gamma) * cost_hat, "noisy rate")
}

/// Rate for nonlinear plants with initial states uniform on `[-r_ini, r_ini]^n`.
pub fn update_rate_nonlinear(
    cost_hat: f64,
    pol: &Policy,
    spec: &LqrCostSpec,
    r_ini: f64,
    scaling: NonlinearRate,
) -> Result<f64> {
    if !(r_ini > 0.0 && r_ini.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "r_ini = {r_ini} must be positive"
        )));
    }
    let divisor = match scaling {
        NonlinearRate::Variance => r_ini * r_ini,
        NonlinearRate::Literal => r_ini,
    };
    rate_from(
        spec.sigma_min_stage(pol),
        3.0 * cost_hat / divisor,
        "nonlinear rate",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    /// Threshold met (or the fixed step count completed).
    Done,
    /// `max_inner` steps without meeting the threshold.
    Stalled,
    /// Estimates diverged or a step left the stabilizing set.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub status: InnerStatus,
    /// Final policy; on a stall, the lowest-cost policy seen.
    pub policy: Policy,
    /// Cost of `policy` at the current discount (exact, or the last estimate).
    pub cost: f64,
    pub cost_std_err: f64,
    pub steps: usize,
    pub rollouts: usize,
    pub dropped_pairs: usize,
    pub backtracks: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy)]
struct Evaluation {
    value: f64,
    std_err: f64,
    rollouts: usize,
}

fn evaluate(
    plant: &Plant<'_>,
    pol: &Policy,
    spec: &LqrCostSpec,
    batch: usize,
    horizon: usize,
    key: StreamKey,
) -> Result<Evaluation> {
    let gamma = spec.gamma();
    let est = match plant {
        Plant::Linear(e) => estimate_cost(*e, pol, gamma, batch, horizon, key),
        Plant::Noisy(e) => estimate_cost(*e, pol, gamma, batch, horizon, key),
        Plant::Nonlinear(e) => estimate_cost(*e, pol, gamma, batch, horizon, key),
    };
    match est {
        Ok(c) => Ok(Evaluation {
            value: c.value,
            std_err: c.std_err,
            rollouts: c.n_rollouts,
        }),
        Err(Error::EstimationFailure { .. }) => Ok(Evaluation {
            value: f64::INFINITY,
            std_err: f64::INFINITY,
            rollouts: batch,
        }),
        Err(e) => Err(e),
    }
}

fn sampled_gradient(
    plant: &Plant<'_>,
    pol: &Policy,
    gamma: f64,
    cfg: &RolloutConfig,
    key: StreamKey,
) -> Result<Option<(DMatrix<f64>, usize)>> {
    let est = match plant {
        Plant::Linear(e) => two_point_gradient(*e, pol, gamma, cfg, key),
        Plant::Noisy(e) => two_point_gradient(*e, pol, gamma, cfg, key),
        Plant::Nonlinear(e) => two_point_gradient(*e, pol, gamma, cfg, key),
    };
    match est {
        Ok(g) => Ok(Some((g.grad, g.dropped))),
        Err(Error::EstimationFailure { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Policy-gradient phase for one discount factor.
///
/// Sampled variants use the two-point estimator and judge the threshold on
/// `D/2`; the oracle variant uses exact gradients, compares `J < D` and halves
/// the step while it would raise the exact cost.
pub fn pg_inner_loop(
    plant: Plant<'_>,
    pol: &Policy,
    spec: &LqrCostSpec,
    cfg: &AnnealingConfig,
    key: StreamKey,
) -> Result<InnerOutcome> {
    cfg.validate()?;
    plant.check_variant(cfg.variant)?;
    match cfg.variant {
        Variant::ExactOracle => oracle_inner(plant, pol, spec, cfg),
        _ => sampled_inner(plant, pol, spec, cfg, key),
    }
}

fn oracle_inner(
    plant: Plant<'_>,
    pol: &Policy,
    spec: &LqrCostSpec,
    cfg: &AnnealingConfig,
) -> Result<InnerOutcome> {
    let Plant::Linear(env) = plant else {
        return Err(Error::Config("exact oracle needs a linear plant".into()));
    };
    let sys = &env.sys;
    let mut current = pol.clone();
    let mut cost = exact_cost(sys, &current, spec)?;
    let mut out = InnerOutcome {
        status: InnerStatus::Done,
        policy: current.clone(),
        cost,
        cost_std_err: 0.0,
        steps: 0,
        rollouts: 0,
        dropped_pairs: 0,
        backtracks: 0,
        warnings: Vec::new(),
    };
    if !cost.is_finite() {
        out.status = InnerStatus::Diverged;
        return Ok(out);
    }
    let (max_steps, until) = match cfg.inner_mode {
        InnerMode::UntilThreshold { max_inner } => (max_inner, true),
        InnerMode::FixedSteps { count } => (count, false),
    };
    let threshold = cfg.observed_threshold();
    for _ in 0..max_steps {
        let grad = oracle_gradient(sys, &current, spec)?;
        let mut eta = cfg.rollout.step_size;
        let (mut next, mut next_cost) = (current.clone(), cost);
        for attempt in 0..=MAX_BACKTRACKS {
            next = current.offset(&grad, -eta);
            next_cost = exact_cost(sys, &next, spec)?;
            if eta == 0.0 || (next_cost.is_finite() && next_cost <= cost) {
                break;
            }
            if attempt == MAX_BACKTRACKS {
                out.status = InnerStatus::Stalled;
                out.warnings
                    .push("line search failed to decrease the exact cost".into());
                return Ok(out);
            }
            out.backtracks += 1;
            eta *= 0.5;
        }
        current = next;
        cost = next_cost;
        out.steps += 1;
        out.policy = current.clone();
        out.cost = cost;
        if until && cost < threshold {
            return Ok(out);
        }
    }
    if until {
        out.status = InnerStatus::Stalled;
    }
    Ok(out)
}

fn sampled_inner(
    plant: Plant<'_>,
    pol: &Policy,
    spec: &LqrCostSpec,
    cfg: &AnnealingConfig,
    key: StreamKey,
) -> Result<InnerOutcome> {
    let rc = &cfg.rollout;
    let gamma = spec.gamma();
    let mut out = InnerOutcome {
        status: InnerStatus::Done,
        policy: pol.clone(),
        cost: f64::INFINITY,
        cost_std_err: f64::INFINITY,
        steps: 0,
        rollouts: 0,
        dropped_pairs: 0,
        backtracks: 0,
        warnings: Vec::new(),
    };
    let mut current = pol.clone();
    let mut best: Option<(Policy, f64, f64)> = None;
    let mut last_cost = f64::INFINITY;
    let mut increases = 0;

    let (max_steps, until) = match cfg.inner_mode {
        InnerMode::UntilThreshold { max_inner } => (max_inner, true),
        InnerMode::FixedSteps { count } => (count, false),
    };
    let threshold = cfg.observed_threshold();
    for step in 0..max_steps {
        let step_key = key.child(step as u64);
        out.rollouts += 2 * rc.grad_batch;
        let Some((grad, dropped)) =
            sampled_gradient(&plant, &current, gamma, rc, step_key.child(TAG_GRAD))?
        else {
            out.status = InnerStatus::Diverged;
            out.warnings
                .push(format!("gradient estimate diverged at inner step {step}"));
            return Ok(out);
        };
        out.dropped_pairs += dropped;
        let base = current.clone();
        current = base.offset(&grad, -rc.step_size);
        out.steps += 1;
        out.policy = current.clone();

        let last_step = step + 1 == max_steps;
        if !until && !last_step {
            continue;
        }
        let eval_key = step_key.child(TAG_EVAL);
        let mut eval = evaluate(&plant, &current, spec, rc.eval_batch, rc.horizon, eval_key)?;
        out.rollouts += eval.rollouts;
        if cfg.step_guard {
            // same initial states as the post-step estimate, so the comparison is paired
            let before = evaluate(&plant, &base, spec, rc.eval_batch, rc.horizon, eval_key)?;
            out.rollouts += before.rollouts;
            let mut eta = rc.step_size;
            let mut halvings = 0;
            while before.value.is_finite() && !(eval.value <= before.value) {
                if halvings == MAX_GUARD_HALVINGS {
                    current = base.clone();
                    eval = before;
                    out.warnings.push(format!(
                        "step guard kept the previous gain at inner step {step}"
                    ));
                    break;
                }
                halvings += 1;
                eta *= 0.5;
                out.backtracks += 1;
                current = base.offset(&grad, -eta);
                eval = evaluate(&plant, &current, spec, rc.eval_batch, rc.horizon, eval_key)?;
                out.rollouts += eval.rollouts;
            }
            out.policy = current.clone();
        }
        out.cost = eval.value;
        out.cost_std_err = eval.std_err;
        if !eval.value.is_finite() {
            out.status = InnerStatus::Diverged;
            out.warnings
                .push(format!("cost estimate diverged at inner step {step}"));
            return Ok(out);
        }
        if until {
            if eval.value > last_cost {
                increases += 1;
                if increases == INCREASE_WARNING_RUN {
                    out.warnings.push(format!(
                        "cost estimate increased {INCREASE_WARNING_RUN} consecutive steps (step {step})"
                    ));
                }
            } else {
                increases = 0;
            }
            last_cost = eval.value;
            if best.as_ref().is_none_or(|b| eval.value < b.1) {
                best = Some((current.clone(), eval.value, eval.std_err));
            }
            if eval.value < threshold {
                return Ok(out);
            }
        }
    }
    if until {
        out.status = InnerStatus::Stalled;
        if let Some((p, c, se)) = best {
            out.policy = p;
            out.cost = c;
            out.cost_std_err = se;
        }
    }
    Ok(out)
}

/// One outer iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Discount `gamma^k` used by the policy-gradient phase.
    pub gamma: f64,
    /// `gamma^{k+1} = (1 + xi alpha^k) gamma^k`.
    pub gamma_next: f64,
    /// `K^{k+1}`.
    pub gain: DMatrix<f64>,
    /// Cost of `K^{k+1}` at `gamma^k`: exact or estimated.
    pub cost: f64,
    pub cost_std_err: f64,
    pub alpha: f64,
    pub inner_steps: usize,
    pub rollouts: usize,
    pub dropped_pairs: usize,
    /// Whether the rate needed a re-evaluation with a larger batch and horizon.
    pub retried: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// The discount reached 1.
    Stabilized,
    /// `max_outer` iterations without reaching 1.
    Incomplete,
    /// An inner loop exhausted `max_inner`.
    Stalled,
    /// Rollouts diverged, so no finite cost was available.
    Diverged,
    /// The rate denominator stayed non-positive after a re-evaluation.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealingTrace {
    pub variant: Variant,
    pub gamma0: f64,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub final_policy: Policy,
    /// Last discount reached; `>= 1` exactly when stabilized.
    pub final_gamma: f64,
    pub total_rollouts: usize,
    /// Rollouts spent in an iteration that ended the run without a record.
    pub aborted_rollouts: usize,
    pub message: Option<String>,
    pub wall_time: Duration,
}

impl AnnealingTrace {
    pub fn stabilized(&self) -> bool {
        self.status == RunStatus::Stabilized
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }

    /// `K^k` for `k = 0..=records.len()`, starting from the zero gain.
    pub fn policy_at(&self, k: usize) -> Option<Policy> {
        if k == 0 {
            let (m, n) = self.final_policy.gain().shape();
            return Some(Policy::zeros(m, n));
        }
        self.records
            .get(k - 1)
            .map(|r| Policy::new(r.gain.clone()).expect("recorded gains are finite"))
    }
}

fn rate_for(
    plant: &Plant<'_>,
    cfg: &AnnealingConfig,
    cost: f64,
    pol: &Policy,
    spec: &LqrCostSpec,
) -> Result<f64> {
    match cfg.variant {
        Variant::ExactOracle => margin_alpha_exact(cost, pol, spec),
        Variant::Sampled => update_rate_sampled(cost, pol, spec),
        Variant::Noisy => update_rate_noisy(cost, pol, spec),
        Variant::Nonlinear => {
            let r_ini = plant.initial_box_half_width().ok_or_else(|| {
                Error::Config("nonlinear variant needs a uniform-box initial distribution".into())
            })?;
            update_rate_nonlinear(cost, pol, spec, r_ini, cfg.nonlinear_rate)
        }
    }
}

/// Runs discount annealing from `K = 0` and `gamma = gamma0`.
///
/// Never reads the plant matrices except in the exact-oracle variant. Stalls,
/// divergence and exhausted budgets end the run with a flagged trace.
pub fn run_annealing(plant: Plant<'_>, cfg: &AnnealingConfig) -> Result<AnnealingTrace> {
    cfg.validate()?;
    plant.check_variant(cfg.variant)?;
    if cfg.variant == Variant::Nonlinear && plant.initial_box_half_width().is_none() {
        return Err(Error::Config(
            "nonlinear variant needs a uniform-box initial distribution".into(),
        ));
    }
    let start = Instant::now();
    let (m, n) = plant.dims();
    let (q, r) = plant.penalties();
    let root = StreamKey::new(cfg.rollout.seed);

    let mut pol = Policy::zeros(m, n);
    let mut gamma = cfg.gamma0;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut status = RunStatus::Incomplete;
    let mut message = None;
    let mut aborted_rollouts = 0;
    let mut final_policy = pol.clone();

    for k in 0..cfg.max_outer {
        let key = root.child(k as u64);
        let spec = LqrCostSpec::new(q.clone(), r.clone(), gamma)?;
        let inner = pg_inner_loop(plant, &pol, &spec, cfg, key)?;
        let mut rollouts = inner.rollouts;
        let mut warnings = inner.warnings;
        if inner.status != InnerStatus::Done {
            aborted_rollouts = rollouts;
            final_policy = inner.policy;
            status = match inner.status {
                InnerStatus::Stalled => RunStatus::Stalled,
                _ => RunStatus::Diverged,
            };
            message = Some(format!(
                "iteration {k}: {:?} inner loop; {}",
                inner.status,
                warnings.join("; ")
            ));
            break;
        }
        let next = inner.policy;
        let (mut cost, mut cost_std_err) = (inner.cost, inner.cost_std_err);
        let mut retried = false;
        let alpha = match rate_for(&plant, cfg, cost, &next, &spec) {
            Err(Error::Degenerate(first)) if cfg.variant != Variant::ExactOracle => {
                retried = true;
                let rc = &cfg.rollout;
                let eval = evaluate(
                    &plant,
                    &next,
                    &spec,
                    4 * rc.eval_batch,
                    2 * rc.horizon,
                    key.child(RETRY_KEY),
                )?;
                rollouts += eval.rollouts;
                cost = eval.value;
                cost_std_err = eval.std_err;
                warnings.push(format!("re-evaluated after degenerate rate: {first}"));
                rate_for(&plant, cfg, cost, &next, &spec)
            }
            other => other,
        };
        let alpha = match alpha {
            Ok(a) => a,
            Err(e @ (Error::Degenerate(_) | Error::Domain(_))) => {
                aborted_rollouts = rollouts;
                final_policy = next;
                status = if matches!(e, Error::Degenerate(_)) {
                    RunStatus::Degenerate
                } else {
                    RunStatus::Diverged
                };
                message = Some(format!("iteration {k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let gamma_next = (1.0 + cfg.xi * alpha) * gamma;
        records.push(IterationRecord {
            k,
            gamma,
            gamma_next,
            gain: next.gain().clone(),
            cost,
            cost_std_err,
            alpha,
            inner_steps: inner.steps,
            rollouts,
            dropped_pairs: inner.dropped_pairs,
            retried,
            warnings,
        });
        final_policy = next.clone();
        gamma = gamma_next;
        pol = next;
        if gamma >= 1.0 {
            status = RunStatus::Stabilized;
            break;
        }
    }

    let total_rollouts = records.iter().map(|r| r.rollouts).sum::<usize>() + aborted_rollouts;
    Ok(AnnealingTrace {
        variant: cfg.variant,
        gamma0: cfg.gamma0,
        records,
        status,
        final_policy,
        final_gamma: gamma,
        total_rollouts,
        aborted_rollouts,
        message,
        wall_time: start.elapsed(),
    })
}

/// Guaranteed lower bound on `alpha^k` while the cost threshold holds, if the variant has one.
pub fn alpha_lower_bound(cfg: &AnnealingConfig, sigma_min_q: f64) -> Option<f64> {
    let d = cfg.cost_threshold;
    let s = sigma_min_q;
    match cfg.variant {
        Variant::ExactOracle => Some(s / (d - s)),
        Variant::Sampled => Some(s / (2.0 * d - s)),
        Variant::Noisy => {
            let g = cfg.gamma0;
            Some(g * s / (2.0 * (1.0 - g) * d - g * s))
        }
        Variant::Nonlinear => None,
    }
    .filter(|a| *a > 0.0 && a.is_finite())
}

/// Bound on outer iterations, `log(1/gamma0) / (xi alpha_min)`.
pub fn iteration_bound(cfg: &AnnealingConfig, sigma_min_q: f64) -> Option<f64> {
    alpha_lower_bound(cfg, sigma_min_q).map(|a| (1.0 / cfg.gamma0).ln() / (cfg.xi * a))
}

/// Whether the trace's outer-iteration count respects [`iteration_bound`].
///
/// False when the variant has no bound (nonlinear) or `D <= sigma_min(Q)`.
pub fn iteration_bound_check(
    trace: &AnnealingTrace,
    cfg: &AnnealingConfig,
    sigma_min_q: f64,
) -> bool {
    iteration_bound(cfg, sigma_min_q).is_some_and(|b| trace.outer_iterations() as f64 <= b.ceil())
}
