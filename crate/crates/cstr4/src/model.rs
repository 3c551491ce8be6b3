//! The sampled four-vessel model and its normalization scales.

use std::sync::Arc;

use dspe_core::model::ModelRegistry;
use dspe_core::{NonlinearModel, Real};
use nalgebra::DVector;

use crate::field::Cstr4Field;
use crate::params::{Cstr4Params, NOMINAL_HEAT, N_AUGMENTED, N_INPUTS, N_STATES, SAMPLE_TIME, TEMPERATURES};
use crate::rk4::Rk4;
use crate::steady::PRINTED_STEADY_STATE;

pub type Cstr4<T> = Rk4<Cstr4Field<T>>;

/// Nominal constants, RK4 at `Δt = 1/120 h`.
pub fn cstr4_model<T: Real>() -> Cstr4<T> {
    Rk4 { field: Cstr4Field::default(), dt: SAMPLE_TIME }
}

pub const MODEL_ID: &str = "cstr4";

pub fn register<T: Real>(reg: &mut ModelRegistry<T>) {
    reg.register(MODEL_ID, || Arc::new(cstr4_model::<T>()) as Arc<dyn NonlinearModel<T>>);
}

/// Registry with every bundled model.
pub fn registry<T: Real>() -> ModelRegistry<T> {
    let mut reg = ModelRegistry::new();
    register(&mut reg);
    reg
}

pub fn nominal_heat<T: Real>() -> DVector<T> {
    DVector::from_iterator(N_INPUTS, NOMINAL_HEAT.iter().map(|v| T::lit(*v)))
}

pub fn nominal_theta<T: Real>() -> DVector<T> {
    Cstr4Params::<T>::nominal().theta()
}

/// `[x_s; θ_nominal]`: the normalization of every augmented entry.
pub fn augmented_scales<T: Real>() -> DVector<T> {
    let th = nominal_theta::<T>();
    DVector::from_fn(N_AUGMENTED, |i, _| if i < N_STATES { T::lit(PRINTED_STEADY_STATE[i]) } else { th[i - N_STATES] })
}

/// Steady-state temperatures.
pub fn output_scales<T: Real>() -> DVector<T> {
    DVector::from_iterator(TEMPERATURES.len(), TEMPERATURES.iter().map(|&i| T::lit(PRINTED_STEADY_STATE[i])))
}
