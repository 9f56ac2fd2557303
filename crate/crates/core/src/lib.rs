//! Adaptive two-model multiscale simulation of cohesive interfaces.
//!
//! A cohesive element's traction comes either from the closed-form Taylor
//! model or from a full finite-element solve of a particulate unit cell.
//! An offline database of support-vector score functions picks the model per
//! element and load step, and [`msnet`] balances the resulting heterogeneous
//! jobs over worker servers.

pub mod interface_geom;
pub mod macro_driver;
pub mod msnet;
pub mod ruc_micro;
pub mod sampling_db;
pub mod seed;
pub mod svr;
pub mod tensor_mech;

pub use interface_geom::{CohesiveElement, InterfaceMesh};
pub use macro_driver::{LoadProgram, ModelPolicy, StepRecord};
pub use msnet::{Job, Schedule, Server};
pub use ruc_micro::{MicroResult, Model, Ruc, RucTemplate};
pub use sampling_db::OfflineDatabase;
pub use svr::ScoreFunction;
pub use tensor_mech::{DamageState, DefGradient, MaterialParams, Tensor3, Vec3};
