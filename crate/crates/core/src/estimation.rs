//! Sample-based cost and gradient estimates built from rollouts only.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::simulator::{RolloutConfig, RolloutEnv};

/// Rollouts per batched call; fixed so results do not depend on the thread count.
const ROLLOUT_CHUNK: usize = 256;

/// Monte-Carlo estimate of the truncated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    /// Sample mean; `+inf` if any rollout diverged.
    pub value: f64,
    pub n_rollouts: usize,
    pub horizon: usize,
    /// Sample standard deviation over `sqrt(n_rollouts)`.
    pub std_err: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: DMatrix<f64>,
    /// Pairs that entered the average.
    pub n_pairs: usize,
    /// Pairs dropped because a rollout diverged.
    pub dropped: usize,
    pub smoothing_radius: f64,
    /// Rollouts simulated, dropped pairs included.
    pub rollouts: usize,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean of `batch` independent truncated rollout costs.
pub fn estimate_cost<E: RolloutEnv>(
    env: &E,
    pol: &Policy,
    gamma: f64,
    batch: usize,
    horizon: usize,
    key: StreamKey,
) -> Result<CostEstimate> {
    if batch == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "batch and horizon must be positive".into(),
        ));
    }
    let scenarios: Vec<E::Scenario> = (0..batch as u64)
        .into_par_iter()
        .map(|i| env.sample_scenario(&mut key.stream(i), horizon))
        .collect();
    let zero = DMatrix::zeros(pol.input_dim(), pol.state_dim());
    let costs: Vec<f64> = scenarios
        .par_chunks(ROLLOUT_CHUNK)
        .flat_map_iter(|chunk| {
            let refs: Vec<&E::Scenario> = chunk.iter().collect();
            env.costs_at_offsets(pol, &vec![&zero; chunk.len()], gamma, &refs, horizon)
        })
        .collect();

    let diverged = costs.iter().filter(|c| !c.is_finite()).count();
    if diverged == batch {
        return Err(Error::EstimationFailure {
            diverged,
            total: batch,
        });
    }
    if diverged > 0 {
        return Ok(CostEstimate {
            value: f64::INFINITY,
            n_rollouts: batch,
            horizon,
            std_err: f64::INFINITY,
            diverged,
        });
    }
    let n = batch as f64;
    let mut acc = CompensatedSum::default();
    costs.iter().for_each(|&c| acc.add(c));
    let mean = acc.value() / n;
    let std_err = if batch > 1 {
        let mut sq = CompensatedSum::default();
        costs.iter().for_each(|&c| sq.add((c - mean) * (c - mean)));
        (sq.value() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate {
        value: mean,
        n_rollouts: batch,
        horizon,
        std_err,
        diverged: 0,
    })
}

/// Uniform draw from the Frobenius sphere of radius `sqrt(rows * cols)`.
pub fn sample_sphere_perturbation(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let radius = ((rows * cols) as f64).sqrt();
    loop {
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            return g * (radius / norm);
        }
    }
}

/// One evaluated pair of the two-point estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub direction: DMatrix<f64>,
    pub plus: f64,
    pub minus: f64,
}

impl PairSample {
    fn is_finite(&self) -> bool {
        self.plus.is_finite() && self.minus.is_finite()
    }
}

/// `1/(2 r M) * sum_i (plus_i - minus_i) U_i` over the finite pairs.
///
/// Returns the estimate with the number of pairs used; `None` when no pair is finite.
pub fn two_point_aggregate(samples: &[PairSample], radius: f64) -> Option<(DMatrix<f64>, usize)> {
    let kept: Vec<&PairSample> = samples.iter().filter(|s| s.is_finite()).collect();
    let first = kept.first()?;
    let (rows, cols) = first.direction.shape();
    let mut acc = vec![CompensatedSum::default(); rows * cols];
    for s in &kept {
        let w = s.plus - s.minus;
        for (a, u) in acc.iter_mut().zip(s.direction.iter()) {
            a.add(w * u);
        }
    }
    let scale = 1.0 / (2.0 * radius * kept.len() as f64);
    let grad = DMatrix::from_iterator(rows, cols, acc.iter().map(|a| a.value() * scale));
    Some((grad, kept.len()))
}

/// Two-point zeroth-order gradient estimate at `pol`.
///
/// Pair `i` draws `U_i` and one scenario (initial state or noise path) from
/// stream `i`, and evaluates the truncated cost at `K + r U_i` and `K - r U_i`.
/// Pairs with a divergent rollout are dropped; more than half dropped is an error.
pub fn two_point_gradient<E: RolloutEnv>(
    env: &E,
    pol: &Policy,
    gamma: f64,
    cfg: &RolloutConfig,
    key: StreamKey,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let (m, n) = (pol.input_dim(), pol.state_dim());
    if m != env.input_dim() || n != env.state_dim() {
        return Err(Error::Dimension {
            context: "policy gain",
            expected: format!("{}x{}", env.input_dim(), env.state_dim()),
            got: format!("{m}x{n}"),
        });
    }
    let r = cfg.smoothing_radius;
    let horizon = cfg.horizon;
    let shared = env.pair_shares_scenario();
    let draws: Vec<(
        DMatrix<f64>,
        [DMatrix<f64>; 2],
        E::Scenario,
        Option<E::Scenario>,
    )> = (0..cfg.grad_batch as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i);
            let direction = sample_sphere_perturbation(m, n, &mut rng);
            let first = env.sample_scenario(&mut rng, horizon);
            let second = (!shared).then(|| env.sample_scenario(&mut rng, horizon));
            let offsets = [&direction * r, &direction * -r];
            (direction, offsets, first, second)
        })
        .collect();
    let samples: Vec<PairSample> = draws
        .par_chunks(ROLLOUT_CHUNK / 2)
        .flat_map_iter(|chunk| {
            let mut offsets = Vec::with_capacity(2 * chunk.len());
            let mut scenarios = Vec::with_capacity(2 * chunk.len());
            for (_, [plus, minus], first, second) in chunk {
                offsets.extend([plus, minus]);
                scenarios.extend([first, second.as_ref().unwrap_or(first)]);
            }
            let costs = env.costs_at_offsets(pol, &offsets, gamma, &scenarios, horizon);
            chunk
                .iter()
                .zip(costs.chunks(2))
                .map(|((direction, ..), c)| PairSample {
                    direction: direction.clone(),
                    plus: c[0],
                    minus: c[1],
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let total = samples.len();
    let dropped = samples.iter().filter(|s| !s.is_finite()).count();
    if 2 * dropped > total {
        return Err(Error::EstimationFailure {
            diverged: dropped,
            total,
        });
    }
    let (grad, n_pairs) = two_point_aggregate(&samples, r).ok_or(Error::EstimationFailure {
        diverged: dropped,
        total,
    })?;
    Ok(GradientEstimate {
        grad,
        n_pairs,
        dropped,
        smoothing_radius: r,
        rollouts: 2 * total,
    })
}
