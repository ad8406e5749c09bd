use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::NonlinearSystem;
use crate::control::LtiSystem;

/// Cart-pole constants; defaults are unit masses, length and gravity at 50 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleParams {
    pub pole_mass: f64,
    pub cart_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            pole_mass: 1.0,
            cart_mass: 1.0,
            length: 1.0,
            gravity: 1.0,
            dt: 0.02,
        }
    }
}

/// One explicit Euler step of the cart-pole.
///
/// State is `(z, theta, z_dot, theta_dot)` with `theta = 0` upright. The
/// force is applied unsaturated. Positions advance with the old velocities.
pub fn cartpole_step(p: &CartPoleParams, state: &[f64; 4], u: f64) -> [f64; 4] {
    let [z, theta, zd, thd] = *state;
    let (s, c) = theta.sin_cos();
    let ml = p.pole_mass * p.length;
    let mass = Matrix2::new(p.pole_mass + p.cart_mass, -ml * c, -ml * c, ml * p.length);
    let rhs = Vector2::new(u - ml * s * thd * thd, ml * p.gravity * s);
    // det = m_p l^2 (m_c + m_p sin^2 theta) > 0 for positive constants
    let det = mass.determinant();
    assert!(det > 0.0, "singular cart-pole mass matrix (det = {det})");
    let acc = Vector2::new(
        (mass[(1, 1)] * rhs[0] - mass[(0, 1)] * rhs[1]) / det,
        (mass[(0, 0)] * rhs[1] - mass[(1, 0)] * rhs[0]) / det,
    );
    [
        z + p.dt * zd,
        theta + p.dt * thd,
        zd + p.dt * acc[0],
        thd + p.dt * acc[1],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }

    pub fn nonlinear_system(&self) -> NonlinearSystem {
        let p = self.params;
        NonlinearSystem::new(4, 1, move |x, u| {
            let next = cartpole_step(&p, &[x[0], x[1], x[2], x[3]], u[0]);
            DVector::from_column_slice(&next)
        })
        .expect("upright cart-pole is an equilibrium")
    }

    /// Euler discretization of the dynamics linearized about the upright equilibrium.
    pub fn linearization(&self) -> LtiSystem {
        let p = self.params;
        let ml = p.pole_mass * p.length;
        let mass = Matrix2::new(p.pole_mass + p.cart_mass, -ml, -ml, ml * p.length);
        let inv = mass
            .try_inverse()
            .expect("mass matrix at upright is invertible");
        let acc_theta = inv * Vector2::new(0.0, ml * p.gravity);
        let acc_u = inv * Vector2::new(1.0, 0.0);

        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] += p.dt;
        a[(1, 3)] += p.dt;
        a[(2, 1)] += p.dt * acc_theta[0];
        a[(3, 1)] += p.dt * acc_theta[1];
        let b = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, p.dt * acc_u[0], p.dt * acc_u[1]]);
        LtiSystem::new(a, b).expect("finite linearization")
    }
}
