//! Flux models: linear advection, Burgers and the 2D compressible Euler equations.
//!
//! States are fixed-size arrays of [`MAX_VARS`] entries; scalar models use the
//! first slot only. Every model carries a `flux_scale` that multiplies flux and
//! wave speed, which is how the evolution-invariance checks build `lambda F`.

use thiserror::Error;

pub const MAX_VARS: usize = 4;
pub type Vars = [f64; MAX_VARS];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PhysicsError {
    #[error("inadmissible state: density {rho:e}, internal energy {internal_energy:e}")]
    Inadmissible { rho: f64, internal_energy: f64 },
    #[error("non-finite state {0:?}")]
    NonFinite(Vars),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// u_t + u_x + u_y = 0
    Advection,
    /// u_t + (u^2/2)_x + (u^2/2)_y = 0
    Burgers,
    Euler {
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub flux_scale: f64,
}

/// Rotation applied to velocity vectors under a mesh rotation by `phi`.
pub fn rotation_matrix(phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    [[c, s], [-s, c]]
}

impl Model {
    pub fn advection() -> Model {
        Model { kind: ModelKind::Advection, flux_scale: 1.0 }
    }

    pub fn burgers() -> Model {
        Model { kind: ModelKind::Burgers, flux_scale: 1.0 }
    }

    pub fn euler() -> Model {
        Model { kind: ModelKind::Euler { gamma: 1.4 }, flux_scale: 1.0 }
    }

    pub fn scaled(self, lambda: f64) -> Model {
        Model { flux_scale: self.flux_scale * lambda, ..self }
    }

    pub fn ncomp(&self) -> usize {
        match self.kind {
            ModelKind::Euler { .. } => 4,
            _ => 1,
        }
    }

    pub fn is_euler(&self) -> bool {
        matches!(self.kind, ModelKind::Euler { .. })
    }

    fn gamma(&self) -> f64 {
        match self.kind {
            ModelKind::Euler { gamma } => gamma,
            _ => f64::NAN,
        }
    }

    /// Internal energy density E - |m|^2 / (2 rho).
    pub fn internal_energy(u: &Vars) -> f64 {
        u[3] - 0.5 * (u[1] * u[1] + u[2] * u[2]) / u[0]
    }

    pub fn pressure(&self, u: &Vars) -> f64 {
        (self.gamma() - 1.0) * Model::internal_energy(u)
    }

    /// Conservative state from (rho, v1, v2, p).
    pub fn from_primitive(&self, rho: f64, v1: f64, v2: f64, p: f64) -> Vars {
        let e = p / (self.gamma() - 1.0) + 0.5 * rho * (v1 * v1 + v2 * v2);
        [rho, rho * v1, rho * v2, e]
    }

    /// (rho, v1, v2, p) of a conservative state.
    pub fn to_primitive(&self, u: &Vars) -> [f64; 4] {
        [u[0], u[1] / u[0], u[2] / u[0], self.pressure(u)]
    }

    pub fn admissible(&self, u: &Vars) -> bool {
        match self.kind {
            ModelKind::Euler { .. } => {
                u[..4].iter().all(|x| x.is_finite()) && u[0] > 0.0 && Model::internal_energy(u) > 0.0
            }
            _ => u[0].is_finite(),
        }
    }

    pub fn check(&self, u: &Vars) -> Result<(), PhysicsError> {
        if self.admissible(u) {
            return Ok(());
        }
        if !u[..self.ncomp()].iter().all(|x| x.is_finite()) {
            return Err(PhysicsError::NonFinite(*u));
        }
        Err(PhysicsError::Inadmissible { rho: u[0], internal_energy: Model::internal_energy(u) })
    }

    /// Cartesian fluxes (f1, f2). No admissibility check.
    #[inline]
    pub fn flux(&self, u: &Vars) -> (Vars, Vars) {
        let s = self.flux_scale;
        match self.kind {
            ModelKind::Advection => ([s * u[0], 0.0, 0.0, 0.0], [s * u[0], 0.0, 0.0, 0.0]),
            ModelKind::Burgers => {
                let f = 0.5 * s * u[0] * u[0];
                ([f, 0.0, 0.0, 0.0], [f, 0.0, 0.0, 0.0])
            }
            ModelKind::Euler { gamma } => {
                let v1 = u[1] / u[0];
                let v2 = u[2] / u[0];
                let p = (gamma - 1.0) * (u[3] - 0.5 * (u[1] * v1 + u[2] * v2));
                (
                    [s * u[1], s * (u[1] * v1 + p), s * u[2] * v1, s * (u[3] + p) * v1],
                    [s * u[2], s * u[1] * v2, s * (u[2] * v2 + p), s * (u[3] + p) * v2],
                )
            }
        }
    }

    /// F(u) . n
    #[inline]
    pub fn normal_flux(&self, u: &Vars, n: [f64; 2]) -> Vars {
        let (f1, f2) = self.flux(u);
        std::array::from_fn(|c| f1[c] * n[0] + f2[c] * n[1])
    }

    /// Spectral radius of the normal Jacobian (|F'(u) . n| for scalars).
    pub fn wavespeed(&self, u: &Vars, n: [f64; 2]) -> Result<f64, PhysicsError> {
        let s = self.flux_scale.abs();
        match self.kind {
            ModelKind::Advection => Ok(s * (n[0] + n[1]).abs()),
            ModelKind::Burgers => Ok(s * (u[0] * (n[0] + n[1])).abs()),
            ModelKind::Euler { gamma } => {
                self.check(u)?;
                let vn = (u[1] * n[0] + u[2] * n[1]) / u[0];
                let p = (gamma - 1.0) * Model::internal_energy(u);
                Ok(s * (vn.abs() + (gamma * p / u[0]).sqrt()))
            }
        }
    }

    /// Local Lax-Friedrichs flux with a given dissipation coefficient.
    #[inline]
    pub fn lf_flux(&self, ui: &Vars, ue: &Vars, n: [f64; 2], alpha: f64) -> Vars {
        let fi = self.normal_flux(ui, n);
        let fe = self.normal_flux(ue, n);
        std::array::from_fn(|c| 0.5 * (fi[c] + fe[c] - alpha * (ue[c] - ui[c])))
    }

    /// Mirror state across a wall with unit normal n.
    pub fn reflect(&self, u: &Vars, n: [f64; 2]) -> Vars {
        match self.kind {
            ModelKind::Euler { .. } => {
                let mn = u[1] * n[0] + u[2] * n[1];
                [u[0], u[1] - 2.0 * mn * n[0], u[2] - 2.0 * mn * n[1], u[3]]
            }
            _ => *u,
        }
    }

    /// Applies T = diag(1, M, 1) for Euler; scalar models are unchanged.
    pub fn rotate(&self, u: &Vars, m: [[f64; 2]; 2]) -> Vars {
        match self.kind {
            ModelKind::Euler { .. } => [u[0], m[0][0] * u[1] + m[0][1] * u[2], m[1][0] * u[1] + m[1][1] * u[2], u[3]],
            _ => *u,
        }
    }
}
