//! Diffeomorphic 3D registration with a neural stationary velocity field.
//!
//! A coordinate network (sine activations by default) maps a coarse lattice
//! of normalized points to velocities, which are upsampled, integrated by
//! scaling and squaring and used to warp the moving image. The network is
//! optimized per image pair against a windowed NCC similarity, a
//! negative-Jacobian penalty and a smoothness term. An optional initial
//! displacement turns the run into a residual refinement.
//!
//! Everything is generic over the scalar type; the aliases below fix it.

pub mod error;
pub mod field;
pub mod integrate;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nvf;
pub mod optim;
pub mod register;
pub mod scalar;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use field::VectorField;
pub use scalar::Real;
pub use volume::{Dims, LabelVolume, Volume};

pub type Volume64 = Volume<f64>;
pub type Volume32 = Volume<f32>;
pub type VectorField64 = VectorField<f64>;
pub type VectorField32 = VectorField<f32>;
pub type VelocityModel64 = model::VelocityModel<f64>;
pub type VelocityModel32 = model::VelocityModel<f32>;
pub type RegistrationResult64 = register::RegistrationResult<f64>;
