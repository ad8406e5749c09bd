use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitKind {
    /// Uniform on the sphere of the given radius; radius `sqrt(n)` has unit covariance.
    UniformSphere { radius: f64 },
    /// `N(0, I)`. Unbounded support.
    StandardGaussian,
    /// Independent uniform coordinates on `[-half_width, half_width]`.
    UniformBox { half_width: f64 },
}

/// Distribution of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialStateDist {
    pub kind: InitKind,
    pub dim: usize,
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn sphere_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let g = gaussian_vector(rng, dim);
        let norm = g.norm();
        if norm > 1e-300 {
            return g * (radius / norm);
        }
    }
}

impl InitialStateDist {
    pub fn new(kind: InitKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let ok = match kind {
            InitKind::UniformSphere { radius } => radius > 0.0 && radius.is_finite(),
            InitKind::StandardGaussian => true,
            InitKind::UniformBox { half_width } => half_width > 0.0 && half_width.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid initial distribution {kind:?}"
            )));
        }
        Ok(Self { kind, dim })
    }

    /// Sphere of radius `sqrt(n)`: zero mean, identity covariance, `|x0| = sqrt(n)`.
    pub fn unit_sphere(dim: usize) -> Self {
        Self {
            kind: InitKind::UniformSphere {
                radius: (dim as f64).sqrt(),
            },
            dim,
        }
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self {
            kind: InitKind::StandardGaussian,
            dim,
        }
    }

    pub fn uniform_box(dim: usize, half_width: f64) -> Self {
        Self {
            kind: InitKind::UniformBox { half_width },
            dim,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self.kind {
            InitKind::UniformSphere { radius } => sphere_point(rng, self.dim, radius),
            InitKind::StandardGaussian => gaussian_vector(rng, self.dim),
            InitKind::UniformBox { half_width } => {
                DVector::from_fn(self.dim, |_, _| rng.random_range(-half_width..=half_width))
            }
        }
    }

    /// Bound `d` on `|x0|`, if the support is bounded.
    pub fn support_bound(&self) -> Option<f64> {
        match self.kind {
            InitKind::UniformSphere { radius } => Some(radius),
            InitKind::StandardGaussian => None,
            InitKind::UniformBox { half_width } => Some(half_width * (self.dim as f64).sqrt()),
        }
    }

    /// Per-coordinate variance; the covariance is this times the identity.
    pub fn variance(&self) -> f64 {
        match self.kind {
            InitKind::UniformSphere { radius } => radius * radius / self.dim as f64,
            InitKind::StandardGaussian => 1.0,
            InitKind::UniformBox { half_width } => half_width * half_width / 3.0,
        }
    }

    /// True when the draw does not have zero mean, unit covariance and bounded support.
    pub fn assumption_relaxed(&self) -> bool {
        self.support_bound().is_none() || (self.variance() - 1.0).abs() > 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    UniformSphere {
        radius: f64,
    },
    /// Gaussian conditioned on `|w| <= bound`, rescaled to unit covariance.
    TruncatedGaussian {
        bound: f64,
    },
}

/// Additive process noise: zero mean, identity covariance, bounded support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseDist {
    pub kind: NoiseKind,
    pub dim: usize,
    /// Scale applied to the truncated Gaussian draw; 1 for the sphere.
    scale: f64,
}

// P(chi^2_k <= x)
fn chi2_cdf(k: f64, x: f64) -> f64 {
    gamma_lr(k / 2.0, x / 2.0)
}

impl NoiseDist {
    pub fn new(kind: NoiseKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let n = dim as f64;
        let scale = match kind {
            NoiseKind::UniformSphere { radius } => {
                if (radius - n.sqrt()).abs() > 1e-12 * n.sqrt() {
                    return Err(Error::InvalidArgument(format!(
                        "sphere noise needs radius sqrt({dim}) for unit covariance"
                    )));
                }
                1.0
            }
            NoiseKind::TruncatedGaussian { bound } => {
                // the rescaled second moment saturates at n bound^2 / (n + 2)
                if !(bound * bound > n + 2.0 && bound.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "truncation bound {bound} must exceed sqrt({dim} + 2)"
                    )));
                }
                truncated_scale(n, bound)
            }
        };
        Ok(Self { kind, dim, scale })
    }

    pub fn unit_sphere(dim: usize) -> Self {
        Self {
            kind: NoiseKind::UniformSphere {
                radius: (dim as f64).sqrt(),
            },
            dim,
            scale: 1.0,
        }
    }

    pub fn support_bound(&self) -> f64 {
        match self.kind {
            NoiseKind::UniformSphere { radius } => radius,
            NoiseKind::TruncatedGaussian { bound } => bound,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self.kind {
            NoiseKind::UniformSphere { radius } => sphere_point(rng, self.dim, radius),
            NoiseKind::TruncatedGaussian { bound } => {
                let inner = bound / self.scale;
                loop {
                    let g = gaussian_vector(rng, self.dim);
                    if g.norm() <= inner {
                        return g * self.scale;
                    }
                }
            }
        }
    }
}

// Scale c with c^2 E[|g|^2 | |g| <= bound/c] = n, so that c*g has unit
// covariance and support radius `bound`.
fn truncated_scale(n: f64, bound: f64) -> f64 {
    let second_moment = |c: f64| {
        let x = (bound / c).powi(2);
        c * c * n * chi2_cdf(n + 2.0, x) / chi2_cdf(n, x)
    };
    let (mut lo, mut hi) = (1.0, 1.0);
    while second_moment(hi) < n {
        hi *= 2.0;
    }
    while second_moment(lo) > n {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if second_moment(mid) < n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
