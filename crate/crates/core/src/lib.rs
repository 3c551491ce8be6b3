//! Simultaneous state and parameter estimation for partially observable
//! nonlinear discrete-time systems.
//!
//! The pipeline: append the unknown parameters to the state ([`model`]), test
//! local observability through windowed output sensitivities ([`sensitivity`]),
//! pick the estimable subset by greedy orthogonalization ([`selection`]), split
//! the system into weakly coupled subsystems by modularity maximization on a
//! directed variable graph ([`graph`]), and estimate with communicating
//! moving-horizon estimators ([`mhe`]).
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below fix the scalar to `f64`.

pub mod error;
pub mod graph;
pub mod mhe;
pub mod model;
pub mod scalar;
pub mod selection;
pub mod sensitivity;

pub use error::{Error, Result};
pub use model::{augment, simulate, AugmentedModel, Dims, LinearModel, LinearizedModel, NoiseSpec, NonlinearModel, Trajectory};
pub use scalar::Real;

pub type Vector64 = nalgebra::DVector<f64>;
pub type Matrix64 = nalgebra::DMatrix<f64>;
pub type LinearModel64 = LinearModel<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type SensitivityMatrix64 = sensitivity::SensitivityMatrix<f64>;
pub type SelectionResult64 = selection::SelectionResult<f64>;
pub type MheConfig64 = mhe::MheConfig<f64>;
pub type MheResult64 = mhe::MheResult<f64>;
