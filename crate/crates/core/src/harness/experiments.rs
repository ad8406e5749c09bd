use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roa::{estimate_roa, RoaResult};
use crate::annealing::{
    run_annealing, AnnealingConfig, AnnealingTrace, InnerMode, NonlinearRate, Plant, RunStatus,
    Variant,
};
use crate::control::{optimal_lqr, spectral_radius, LqrCostSpec, LtiSystem, Policy};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::simulator::{
    CartPole, CartPoleParams, InitialStateDist, LinearEnv, NoiseDist, NoisyEnv, NonlinearEnv,
    RolloutConfig,
};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// `A = 2 S / |S|` with `S = G + G'` and `B = H / |H|` for Gaussian `G`, `H`.
///
/// `A` is symmetric with `rho(A) = |A| = 2`; `|B| = 1`.
pub fn generate_random_system(n: usize, m: usize, rng: &mut ChaCha8Rng) -> LtiSystem {
    assert!(n >= 1 && m >= 1, "dimensions must be positive");
    let mut gauss =
        |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = loop {
        let g = gauss(n, n);
        let s = &g + g.transpose();
        let norm = spectral_norm(&s);
        if norm > 1e-12 {
            break s * (2.0 / norm);
        }
    };
    let b = loop {
        let h = gauss(n, m);
        let norm = spectral_norm(&h);
        if norm > 1e-12 {
            break h / norm;
        }
    };
    LtiSystem::new(a, b).expect("finite random system")
}

/// The 2-state, 1-input example plant.
pub fn two_dim_env() -> LinearEnv {
    LinearEnv {
        sys: LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 1.5]),
            DMatrix::from_row_slice(2, 1, &[2.0, 2.0]),
        )
        .expect("finite example"),
        q: DMatrix::identity(2, 2),
        r: DMatrix::from_element(1, 1, 2.0),
        init: InitialStateDist::standard_gaussian(2),
    }
}

/// The 2D plant driven by unit-covariance noise on the sphere of radius `sqrt(2)`.
pub fn two_dim_noisy_env() -> NoisyEnv {
    let env = two_dim_env();
    NoisyEnv {
        sys: env.sys,
        q: env.q,
        r: env.r,
        noise: NoiseDist::unit_sphere(2),
        common_noise: true,
    }
}

/// Optimal undiscounted cost `J*_1`, the default scale for the threshold `D = 2 J*_1`.
pub fn optimal_cost(env: &LinearEnv) -> Result<f64> {
    let spec = LqrCostSpec::new(env.q.clone(), env.r.clone(), 1.0)?;
    Ok(optimal_lqr(&env.sys, &spec)?.1)
}

/// Defaults of the 2D experiment for the given variant.
///
/// Sampled and noisy runs take one gradient step per discount update with
/// `eta = 1e-3`; the oracle run steps until `J < D` with `eta = 1e-2`. The noisy
/// cost grows like `1 / (1 - gamma)`, so noisy runs guard each step.
pub fn two_dim_config(variant: Variant, seed: u64) -> Result<AnnealingConfig> {
    let d = 2.0 * optimal_cost(&two_dim_env())?;
    let (inner_mode, step_size) = match variant {
        Variant::ExactOracle => (InnerMode::UntilThreshold { max_inner: 100_000 }, 1e-2),
        _ => (InnerMode::FixedSteps { count: 1 }, 1e-3),
    };
    Ok(AnnealingConfig {
        gamma0: 1e-3,
        xi: 0.9,
        cost_threshold: d,
        inner_mode,
        rollout: RolloutConfig {
            horizon: 100,
            eval_batch: 20,
            grad_batch: 20,
            smoothing_radius: 2e-3,
            step_size,
            seed,
        },
        max_outer: 1000,
        variant,
        nonlinear_rate: NonlinearRate::default(),
        step_guard: variant == Variant::Noisy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimScalingConfig {
    pub n_values: Vec<usize>,
    pub input_dim: usize,
    pub trials: usize,
    /// Gradient pairs per state dimension, `M = grad_pairs_per_state * n`.
    pub grad_pairs_per_state: usize,
    /// Per-run settings; `grad_batch`, `seed` and `cost_threshold` are set per trial.
    pub annealing: AnnealingConfig,
    pub seed: u64,
    /// Bootstrap resamples for the slope interval.
    pub bootstrap: usize,
}

impl DimScalingConfig {
    /// Desk-scale defaults: `n` in {4, 8, 16, 32}, `m = 8`, 10 trials, `gamma0 = 0.225`.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            n_values: vec![4, 8, 16, 32],
            input_dim: 8,
            trials: 10,
            grad_pairs_per_state: 20,
            annealing: AnnealingConfig {
                gamma0: 0.9 / 4.0,
                xi: 0.9,
                cost_threshold: 1.0,
                inner_mode: InnerMode::FixedSteps { count: 1 },
                rollout: RolloutConfig {
                    horizon: 100,
                    eval_batch: 20,
                    grad_batch: 20,
                    smoothing_radius: 2e-3,
                    step_size: 1e-3,
                    seed,
                },
                max_outer: 2000,
                variant: Variant::Sampled,
                nonlinear_rate: NonlinearRate::default(),
                step_guard: true,
            },
            seed,
            bootstrap: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub outer_iterations: usize,
    pub total_rollouts: usize,
    /// `rho(A - B K_final)` of the known plant.
    pub final_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimRow {
    pub n: usize,
    pub completed: usize,
    pub excluded: usize,
    pub mean_rollouts: f64,
    pub std_rollouts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimScalingResult {
    pub trials: Vec<TrialOutcome>,
    pub rows: Vec<DimRow>,
    /// Least-squares slope of `ln(mean rollouts)` against `ln n`; needs two or more `n`.
    pub slope: Option<f64>,
    /// 95% percentile bootstrap interval over trials.
    pub slope_ci: Option<(f64, f64)>,
}

/// Least-squares slope through `(x, y)`; `None` with fewer than two distinct `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn loglog_slope(groups: &[(usize, Vec<f64>)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = groups
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(n, v)| {
            (
                (*n as f64).ln(),
                (v.iter().sum::<f64>() / v.len() as f64).ln(),
            )
        })
        .collect();
    fit_slope(&pts)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn trial_key(seed: u64, n: usize, trial: usize) -> StreamKey {
    StreamKey::new(seed).child(n as u64).child(trial as u64)
}

/// Runs `trials` sampled annealing runs on fresh random systems for each `n`.
///
/// Runs that do not reach `gamma >= 1` are excluded; more than a quarter
/// excluded at any `n` fails the study.
pub fn run_dim_scaling(cfg: &DimScalingConfig) -> Result<DimScalingResult> {
    if cfg.trials == 0
        || cfg.n_values.is_empty()
        || cfg.input_dim == 0
        || cfg.grad_pairs_per_state == 0
    {
        return Err(Error::Config(
            "dimension study needs trials, n values, input_dim and pairs per state".into(),
        ));
    }
    if cfg.annealing.variant != Variant::Sampled {
        return Err(Error::Config(
            "dimension study runs the sampled variant".into(),
        ));
    }
    cfg.annealing.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(n, trial)| -> Result<TrialOutcome> {
            let key = trial_key(cfg.seed, n, trial);
            let sys = generate_random_system(n, cfg.input_dim, &mut key.child(0).stream(0));
            let env = LinearEnv {
                sys,
                q: DMatrix::identity(n, n),
                r: DMatrix::identity(cfg.input_dim, cfg.input_dim),
                init: InitialStateDist::standard_gaussian(n),
            };
            let mut run_cfg = cfg.annealing.clone();
            run_cfg.rollout.grad_batch = cfg.grad_pairs_per_state * n;
            run_cfg.rollout.seed = key.child(1).raw();
            if matches!(run_cfg.inner_mode, InnerMode::UntilThreshold { .. }) {
                run_cfg.cost_threshold = 2.0 * optimal_cost(&env)?;
            }
            let trace = run_annealing(Plant::Linear(&env), &run_cfg)?;
            let final_rho = spectral_radius(&env.sys.closed_loop(&trace.final_policy)?)?;
            Ok(TrialOutcome {
                n,
                trial,
                seed: run_cfg.rollout.seed,
                status: trace.status,
                outer_iterations: trace.outer_iterations(),
                total_rollouts: trace.total_rollouts,
                final_rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for &n in &cfg.n_values {
        let done: Vec<f64> = trials
            .iter()
            .filter(|t| t.n == n && t.status == RunStatus::Stabilized)
            .map(|t| t.total_rollouts as f64)
            .collect();
        let excluded = cfg.trials - done.len();
        if 4 * excluded > cfg.trials {
            return Err(Error::Study(format!(
                "n = {n}: {excluded} of {} runs did not stabilize",
                cfg.trials
            )));
        }
        let mean = done.iter().sum::<f64>() / done.len() as f64;
        let var = if done.len() > 1 {
            done.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (done.len() - 1) as f64
        } else {
            0.0
        };
        rows.push(DimRow {
            n,
            completed: done.len(),
            excluded,
            mean_rollouts: mean,
            std_rollouts: var.sqrt(),
        });
        groups.push((n, done));
    }

    let slope = loglog_slope(&groups);
    let slope_ci = slope.and_then(|_| {
        if cfg.bootstrap == 0 {
            return None;
        }
        let mut rng = StreamKey::new(cfg.seed).child(u64::MAX).stream(0);
        let mut slopes: Vec<f64> = (0..cfg.bootstrap)
            .filter_map(|_| {
                let resampled: Vec<(usize, Vec<f64>)> = groups
                    .iter()
                    .map(|(n, v)| {
                        (
                            *n,
                            (0..v.len())
                                .map(|_| v[rng.random_range(0..v.len())])
                                .collect(),
                        )
                    })
                    .collect();
                loglog_slope(&resampled)
            })
            .collect();
        slopes.sort_by(f64::total_cmp);
        Some((percentile(&slopes, 0.025), percentile(&slopes, 0.975)))
    });
    Ok(DimScalingResult {
        trials,
        rows,
        slope,
        slope_ci,
    })
}

/// Cart-pole penalties `Q = 2 I`, `R = 1`.
pub fn cartpole_penalties() -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::identity(4, 4) * 2.0, DMatrix::identity(1, 1))
}

pub fn cartpole_env(params: CartPoleParams, r_ini: f64) -> NonlinearEnv {
    let (q, r) = cartpole_penalties();
    NonlinearEnv {
        nl: CartPole::new(params).nonlinear_system(),
        q,
        r,
        init: InitialStateDist::uniform_box(4, r_ini),
    }
}

/// Cart-pole annealing defaults: `gamma0 = 0.01`, `tau = 1000`, `M = N = 20`,
/// `r = 0.01`, `eta = 1e-3`, `xi = 1`, one gradient step per update.
pub fn cartpole_config(seed: u64) -> AnnealingConfig {
    AnnealingConfig {
        gamma0: 0.01,
        xi: 1.0,
        // unused with one fixed step per update
        cost_threshold: 1e3,
        inner_mode: InnerMode::FixedSteps { count: 1 },
        rollout: RolloutConfig {
            horizon: 1000,
            eval_batch: 20,
            grad_batch: 20,
            smoothing_radius: 0.01,
            step_size: 1e-3,
            seed,
        },
        max_outer: 5000,
        variant: Variant::Nonlinear,
        nonlinear_rate: NonlinearRate::default(),
        step_guard: true,
    }
}

/// Infinite-horizon LQR gain of the linearized cart-pole.
pub fn cartpole_lqr_gain(params: CartPoleParams) -> Result<Policy> {
    let (q, r) = cartpole_penalties();
    let lin = CartPole::new(params).linearization();
    Ok(optimal_lqr(&lin, &LqrCostSpec::new(q, r, 1.0)?)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleStudy {
    pub params: CartPoleParams,
    pub r_ini_values: Vec<f64>,
    pub trials: usize,
    pub annealing: AnnealingConfig,
    pub roa_step: f64,
    pub roa_max: f64,
    pub roa_trials: usize,
    pub roa_horizon: usize,
    pub seed: u64,
}

impl CartPoleStudy {
    pub fn defaults(seed: u64) -> Self {
        Self {
            params: CartPoleParams::default(),
            r_ini_values: vec![0.1, 0.3, 0.5],
            trials: 3,
            annealing: cartpole_config(seed),
            roa_step: 0.01,
            roa_max: 2.0,
            roa_trials: 1000,
            roa_horizon: 2000,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CartPoleRun {
    pub r_ini: f64,
    pub trial: usize,
    pub trace: AnnealingTrace,
    /// `None` when annealing did not reach `gamma >= 1`.
    pub roa: Option<RoaResult>,
}

#[derive(Debug, Clone)]
pub struct CartPoleReport {
    pub runs: Vec<CartPoleRun>,
    pub baseline_gain: Policy,
    pub baseline_roa: RoaResult,
}

impl CartPoleReport {
    /// Mean ROA radius over stabilized runs for one `r_ini`.
    pub fn mean_roa(&self, r_ini: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.r_ini == r_ini)
            .filter_map(|r| r.roa.as_ref().map(|x| x.r_roa))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains gains by nonlinear annealing for each `r_ini` and compares their
/// regions of attraction with the linearized LQR gain.
pub fn run_cartpole(study: &CartPoleStudy) -> Result<CartPoleReport> {
    if study.trials == 0 || study.r_ini_values.is_empty() {
        return Err(Error::Config(
            "cart-pole study needs trials and r_ini values".into(),
        ));
    }
    let grid = super::roa::radius_grid(study.roa_step, study.roa_max);
    let nl = CartPole::new(study.params).nonlinear_system();
    let root = StreamKey::new(study.seed);
    let roa_key = root.child(u64::MAX);

    let jobs: Vec<(usize, f64, usize)> = study
        .r_ini_values
        .iter()
        .enumerate()
        .flat_map(|(i, &r)| (0..study.trials).map(move |t| (i, r, t)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, r_ini, trial)| -> Result<CartPoleRun> {
            let env = cartpole_env(study.params, r_ini);
            let mut cfg = study.annealing.clone();
            cfg.rollout.seed = root.child(i as u64).child(trial as u64).raw();
            let trace = run_annealing(Plant::Nonlinear(&env), &cfg)?;
            let roa = if trace.stabilized() {
                let mut res = estimate_roa(
                    &nl,
                    &trace.final_policy,
                    &grid,
                    study.roa_trials,
                    study.roa_horizon,
                    roa_key,
                )?;
                res.r_ini = Some(r_ini);
                Some(res)
            } else {
                None
            };
            Ok(CartPoleRun {
                r_ini,
                trial,
                trace,
                roa,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let baseline_gain = cartpole_lqr_gain(study.params)?;
    let baseline_roa = estimate_roa(
        &nl,
        &baseline_gain,
        &grid,
        study.roa_trials,
        study.roa_horizon,
        roa_key,
    )?;
    Ok(CartPoleReport {
        runs,
        baseline_gain,
        baseline_roa,
    })
}
