//! Representative unit cells and the two micro-models that homogenize them.
//!
//! Both models work in the cell-local frame where the interface normal is
//! `Y3 = (0, 0, 1)`; callers rotate jumps in and tractions out.

mod full_model;
mod packing;
mod ruc;
mod sparse;
mod taylor;

use serde::{Deserialize, Serialize};

pub use full_model::{full_model_solve, solve_equilibrium, Equilibrium, SolverOptions};
pub use packing::{pack_particles, PackingMode, ParticleSpec, FRACTION_TOLERANCE};
pub use ruc::{Ruc, RucTemplate, MATRIX_PHASE, PARTICLE_PHASE};
pub use taylor::{taylor_energy_density, taylor_traction};

use crate::tensor_mech::{
    damage_update, norm3, sub3, DamageState, DefGradient, DomainError, MaterialParams, Tensor3,
    Vec3,
};

/// Micro-model choice for a cohesive element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "FM")]
    Full,
    #[serde(rename = "TM")]
    Taylor,
}

impl Model {
    /// Training label: `+1` for FM, `-1` for TM.
    pub fn label(self) -> f64 {
        match self {
            Model::Full => 1.0,
            Model::Taylor => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Full => "FM",
            Model::Taylor => "TM",
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one micro solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroResult {
    /// Homogenized traction in the cell frame (MPa).
    pub traction: Vec3,
    pub mean_damage: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MicroError {
    #[error("inadmissible deformation (det F = {0})")]
    Inadmissible(f64),
    #[error("full model did not converge after {} iterations (residual {:.3e}): {}", .0.iterations, .0.residual, .0.reason)]
    NonConvergence(NewtonDiagnostics),
    #[error("packing failed: {0}")]
    Packing(String),
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Interface deformation gradient `F = I + (1/l_c) jump ⊗ N`.
pub fn macro_f_from_jump(jump: &Vec3, normal: &Vec3, l_c: f64) -> Result<DefGradient, MicroError> {
    let n = norm3(normal);
    if (n - 1.0).abs() > 1e-12 {
        return Err(MicroError::InvalidCell(format!("normal has length {n}")));
    }
    if !(l_c > 0.0) {
        return Err(MicroError::InvalidCell("l_c must be positive".into()));
    }
    let f = Tensor3::IDENTITY + Tensor3::outer(jump, normal).scale(1.0 / l_c);
    DefGradient::new(f).map_err(|_| MicroError::Inadmissible(f.det()))
}

/// FM-vs-TM traction discrepancy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelingError {
    Measured(f64),
    /// FM traction vanished or the FM solve failed.
    Unknown,
}

impl ModelingError {
    /// TM only when the measured error is below `gamma`.
    pub fn label(self, gamma: f64) -> Model {
        match self {
            ModelingError::Measured(e) if e < gamma => Model::Taylor,
            _ => Model::Full,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            ModelingError::Measured(e) => Some(e),
            ModelingError::Unknown => None,
        }
    }
}

/// `‖t_fm - t_tm‖ / ‖t_fm‖`.
pub fn traction_model_error(t_fm: &Vec3, t_tm: &Vec3) -> ModelingError {
    let denom = norm3(t_fm);
    if !(denom > 0.0) || !denom.is_finite() {
        return ModelingError::Unknown;
    }
    ModelingError::Measured(norm3(&sub3(t_fm, t_tm)) / denom)
}

pub(crate) fn update_voxel_damage(
    d: DamageState,
    y_d: f64,
    y_v: f64,
    dt: f64,
    mat: &MaterialParams,
) -> DamageState {
    if dt > 0.0 {
        damage_update(d, y_d, y_v, dt, mat)
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jump_is_identity() {
        let f = macro_f_from_jump(&[0.0; 3], &[0.0, 0.0, 1.0], 100.0).unwrap();
        assert_eq!(*f.tensor(), Tensor3::IDENTITY);
    }

    #[test]
    fn normal_jump_stretches() {
        let f = macro_f_from_jump(&[0.0, 0.0, 10.0], &[0.0, 0.0, 1.0], 100.0).unwrap();
        let mut expect = Tensor3::IDENTITY;
        expect.0[2][2] = 1.1;
        assert!((*f.tensor() - expect).max_abs() < 1e-15);
    }

    #[test]
    fn interpenetration_is_inadmissible() {
        let r = macro_f_from_jump(&[0.0, 0.0, -150.0], &[0.0, 0.0, 1.0], 100.0);
        assert!(matches!(r, Err(MicroError::Inadmissible(_))));
    }

    #[test]
    fn errors_and_labels() {
        assert_eq!(
            traction_model_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            ModelingError::Measured(0.0)
        );
        assert_eq!(
            traction_model_error(&[2.0, 0.0, 0.0], &[1.0, 0.0, 0.0]),
            ModelingError::Measured(0.5)
        );
        let unknown = traction_model_error(&[0.0; 3], &[1.0, 0.0, 0.0]);
        assert_eq!(unknown, ModelingError::Unknown);
        assert_eq!(unknown.label(0.99), Model::Full);
        assert_eq!(ModelingError::Measured(0.1).label(0.15), Model::Taylor);
        assert_eq!(ModelingError::Measured(0.15).label(0.15), Model::Full);
    }
}
