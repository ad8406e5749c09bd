use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::Policy;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::simulator::{InitialStateDist, NonlinearSystem};

/// Region-of-attraction estimate on a radius grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoaResult {
    /// Initial-state half-width used to train the gain, if any.
    pub r_ini: Option<f64>,
    /// Largest grid radius whose trials all converged, below the first failure; 0 if none.
    pub r_roa: f64,
    pub trials_per_radius: usize,
    pub horizon: usize,
    pub radius_grid: Vec<f64>,
    /// Converged trials for each tested radius, in grid order; stops after the first failure.
    pub successes: Vec<usize>,
}

/// `step, 2 step, ..., max` (inclusive up to rounding).
pub fn radius_grid(step: f64, max: f64) -> Vec<f64> {
    let count = (max / step + 1e-9).floor() as usize;
    (1..=count).map(|i| i as f64 * step).collect()
}

/// Sweeps the grid upward: a radius passes when every trial started uniformly
/// on its sphere ends within `radius / 5` of the origin after `horizon` steps.
pub fn estimate_roa(
    nl: &NonlinearSystem,
    pol: &Policy,
    radius_grid: &[f64],
    trials_per_radius: usize,
    horizon: usize,
    key: StreamKey,
) -> Result<RoaResult> {
    if radius_grid.is_empty() {
        return Err(Error::InvalidArgument("radius grid is empty".into()));
    }
    if trials_per_radius == 0 {
        return Err(Error::InvalidArgument(
            "trials_per_radius must be at least 1".into(),
        ));
    }
    if radius_grid.windows(2).any(|w| w[1] <= w[0]) || radius_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "radius grid must be positive and increasing".into(),
        ));
    }
    let n = nl.state_dim();
    let unit = InitialStateDist::unit_sphere(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut r_roa = 0.0;
    let mut successes = Vec::new();
    for (i, &radius) in radius_grid.iter().enumerate() {
        let radius_key = key.child(i as u64);
        let ok = (0..trials_per_radius as u64)
            .into_par_iter()
            .filter(|&t| {
                let mut rng = radius_key.stream(t);
                let x0: DVector<f64> = unit.sample(&mut rng) * (radius * scale);
                nl.simulate_closed_loop(pol, &x0, horizon)
                    .is_some_and(|x| x.norm() <= radius / 5.0)
            })
            .count();
        successes.push(ok);
        if ok < trials_per_radius {
            break;
        }
        r_roa = radius;
    }
    Ok(RoaResult {
        r_ini: None,
        r_roa,
        trials_per_radius,
        horizon,
        radius_grid: radius_grid.to_vec(),
        successes,
    })
}
