use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::experiments::{cartpole_env, generate_random_system, CartPoleStudy, DimScalingConfig};
use crate::annealing::{AnnealingConfig, Plant, Variant};
use crate::control::LtiSystem;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::simulator::{
    CartPoleParams, InitKind, InitialStateDist, LinearEnv, NoiseDist, NoiseKind, NoisyEnv,
    NonlinearEnv,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TwoDim,
    DimScaling,
    CartPole,
    Custom,
}

fn default_true() -> bool {
    true
}

fn default_init() -> InitKind {
    InitKind::StandardGaussian
}

/// Plant of a custom experiment. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        #[serde(default = "default_init")]
        init: InitKind,
        /// Additive process noise; turns the plant into the noisy model.
        #[serde(default)]
        noise: Option<NoiseKind>,
        #[serde(default = "default_true")]
        common_noise: bool,
    },
    /// Random symmetric plant with `|A| = 2`, `|B| = 1`, `Q = I`, `R = I`.
    Random {
        n: usize,
        m: usize,
        #[serde(default)]
        generator_seed: u64,
        #[serde(default = "default_init")]
        init: InitKind,
    },
    CartPole {
        #[serde(default)]
        params: CartPoleParams,
        r_ini: f64,
    },
}

/// A plant built from a [`SystemSpec`].
#[derive(Debug, Clone)]
pub enum BuiltPlant {
    Linear(LinearEnv),
    Noisy(NoisyEnv),
    Nonlinear(NonlinearEnv),
}

impl BuiltPlant {
    pub fn as_plant(&self) -> Plant<'_> {
        match self {
            BuiltPlant::Linear(e) => Plant::Linear(e),
            BuiltPlant::Noisy(e) => Plant::Noisy(e),
            BuiltPlant::Nonlinear(e) => Plant::Nonlinear(e),
        }
    }

    /// The true linear dynamics, when the plant is linear.
    pub fn known_system(&self) -> Option<&LtiSystem> {
        match self {
            BuiltPlant::Linear(e) => Some(&e.sys),
            BuiltPlant::Noisy(e) => Some(&e.sys),
            BuiltPlant::Nonlinear(_) => None,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Config(format!("matrix `{name}` is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Config(format!(
            "matrix `{name}`: row {i} has {} entries, expected {cols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flatten().copied(),
    ))
}

fn check_penalty(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::Config(format!(
            "matrix `{name}` must be {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl SystemSpec {
    pub fn build(&self) -> Result<BuiltPlant> {
        match self {
            SystemSpec::Explicit {
                a,
                b,
                q,
                r,
                init,
                noise,
                common_noise,
            } => {
                let sys = LtiSystem::new(matrix("a", a)?, matrix("b", b)?)?;
                let (n, m) = (sys.state_dim(), sys.input_dim());
                let (q, r) = (matrix("q", q)?, matrix("r", r)?);
                check_penalty("q", &q, n)?;
                check_penalty("r", &r, m)?;
                Ok(match noise {
                    Some(kind) => BuiltPlant::Noisy(NoisyEnv {
                        sys,
                        q,
                        r,
                        noise: NoiseDist::new(*kind, n)?,
                        common_noise: *common_noise,
                    }),
                    None => BuiltPlant::Linear(LinearEnv {
                        sys,
                        q,
                        r,
                        init: InitialStateDist::new(*init, n)?,
                    }),
                })
            }
            SystemSpec::Random {
                n,
                m,
                generator_seed,
                init,
            } => {
                if *n == 0 || *m == 0 {
                    return Err(Error::Config("random system needs n, m >= 1".into()));
                }
                let sys =
                    generate_random_system(*n, *m, &mut StreamKey::new(*generator_seed).stream(0));
                Ok(BuiltPlant::Linear(LinearEnv {
                    sys,
                    q: DMatrix::identity(*n, *n),
                    r: DMatrix::identity(*m, *m),
                    init: InitialStateDist::new(*init, *n)?,
                }))
            }
            SystemSpec::CartPole { params, r_ini } => {
                if !(*r_ini > 0.0 && r_ini.is_finite()) {
                    return Err(Error::Config(format!("r_ini = {r_ini} must be positive")));
                }
                Ok(BuiltPlant::Nonlinear(cartpole_env(*params, *r_ini)))
            }
        }
    }
}

/// Top-level experiment file.
///
/// Sections not relevant to `experiment` must be absent. Missing optional
/// sections fall back to the built-in presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    /// Required for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    /// Run settings for `two_dim` and `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annealing: Option<AnnealingConfig>,
    /// Study settings for `dim_scaling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_scaling: Option<DimScalingConfig>,
    /// Study settings for `cart_pole`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cart_pole: Option<CartPoleStudy>,
    /// Independent seeds or trials; overrides the study's own count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(experiment: ExperimentKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            system: None,
            annealing: None,
            dim_scaling: None,
            cart_pole: None,
            trials: None,
            output_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == Some(0) {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let misplaced = |field: &str| {
            Err(Error::Config(format!(
                "`{field}` is not used by {:?} experiments",
                self.experiment
            )))
        };
        match self.experiment {
            ExperimentKind::TwoDim => {
                if self.system.is_some() {
                    return misplaced("system");
                }
            }
            ExperimentKind::Custom => {
                if self.system.is_none() || self.annealing.is_none() {
                    return Err(Error::Config(
                        "custom experiments need `system` and `annealing`".into(),
                    ));
                }
            }
            ExperimentKind::DimScaling | ExperimentKind::CartPole => {
                if self.system.is_some() {
                    return misplaced("system");
                }
                if self.annealing.is_some() {
                    return misplaced("annealing");
                }
            }
        }
        if self.dim_scaling.is_some() && self.experiment != ExperimentKind::DimScaling {
            return misplaced("dim_scaling");
        }
        if self.cart_pole.is_some() && self.experiment != ExperimentKind::CartPole {
            return misplaced("cart_pole");
        }
        if let Some(a) = &self.annealing {
            a.validate()?;
        }
        if let Some(a) = &self.annealing {
            if let Some(spec) = &self.system {
                let plant = spec.build()?;
                plant.as_plant().check_variant(a.variant)?;
            }
            if self.experiment == ExperimentKind::TwoDim && a.variant == Variant::Nonlinear {
                return Err(Error::Config(
                    "the 2D example has no nonlinear variant".into(),
                ));
            }
        }
        Ok(())
    }
}
