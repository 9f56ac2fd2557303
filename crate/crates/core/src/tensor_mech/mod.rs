//! Finite-strain tensor algebra, Neo-Hookean energies and the split
//! viscous damage model evaluated by both micro-models.
//!
//! Every function here is pure; damage states are passed and returned by
//! value.

mod damage;
mod material;
mod tensor;

pub use damage::{damage_update, saturation, DamageState, OMEGA_MAX};
pub use material::{
    dev_energy, energy_release, pk2_stress, strain_energy, vol_energy, Branch, MaterialParams,
    Tangent4,
};
pub use tensor::{cross, norm3, scale3, sub3, DefGradient, Tensor3, Vec3};

pub(crate) use material::{idx4, response, response_with_tangent};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("tensor is not symmetric")]
    NotSymmetric,
    #[error("tensor is not positive definite")]
    NotPositiveDefinite,
    #[error("tensor is singular")]
    Singular,
    #[error("non-positive Jacobian {0}")]
    NonPositiveJacobian(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid material: {0}")]
    InvalidMaterial(&'static str),
}
