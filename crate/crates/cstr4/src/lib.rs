//! Four interconnected CSTRs with recycle: the benchmark for distributed
//! simultaneous state and parameter estimation.
//!
//! Eight states (concentration and temperature of each vessel), four heat
//! inputs, the four temperatures measured, 21 uncertain parameters. The
//! continuous balances are sampled by RK4 at `Δt = 1/120 h`; [`run_case`] runs
//! the full estimation pipeline for one of the four published cases.

pub mod case;
pub mod detect;
pub mod error;
pub mod field;
pub mod model;
pub mod params;
pub mod report;
pub mod rk4;
pub mod run;
pub mod steady;

pub use case::{CaseConfig, Tuning};
pub use error::{Error, Result, Stage};
pub use field::{cstr4_rhs, Cstr4Field};
pub use model::{cstr4_model, registry, Cstr4};
pub use params::Cstr4Params;
pub use rk4::{discretize_rk4, Rk4, VectorField};
pub use run::{rmse, run_case, run_cases, CaseRun, RmseReport};
pub use steady::{refined_steady_state, steady_state, PRINTED_STEADY_STATE};

pub type Cstr4Model64 = Cstr4<f64>;
pub type Cstr4Params64 = Cstr4Params<f64>;
