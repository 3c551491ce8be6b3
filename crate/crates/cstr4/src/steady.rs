//! The printed operating point and its polished root.

use dspe_core::{Error, Real, Result};
use nalgebra::DVector;

use crate::field::Cstr4Field;
use crate::params::{Cstr4Params, NOMINAL_HEAT, N_STATES};
use crate::rk4::VectorField;

/// `[C1, T1, C2, T2, C3, T3, C4, T4]` in kmol/m³ and K, three significant digits.
pub const PRINTED_STEADY_STATE: [f64; N_STATES] = [2.78, 363.0, 2.58, 356.0, 2.6, 355.0, 2.6, 392.0];

pub fn steady_state<T: Real>() -> DVector<T> {
    DVector::from_iterator(N_STATES, PRINTED_STEADY_STATE.iter().map(|v| T::lit(*v)))
}

/// Newton iteration on `f(x, Q, θ) = 0` seeded at the printed point.
///
/// The point is an unstable equilibrium (one positive eigenvalue near 7.5 h⁻¹),
/// so it is found by root solving rather than by simulation.
pub fn refined_steady_state<T: Real>(params: &Cstr4Params<T>, heat: &DVector<T>) -> Result<DVector<T>> {
    let field = Cstr4Field { params: *params };
    let th = params.theta();
    let scale: DVector<T> = steady_state();
    let mut x = scale.clone();
    for _ in 0..50 {
        let f = field.rhs(&x, heat, &th)?;
        let j = field.rhs_jacobians(&x, heat, &th)?.fx;
        let dx = j.lu().solve(&(-&f)).ok_or_else(|| Error::Evaluation("singular Jacobian at the steady state".into()))?;
        x += &dx;
        let rel = dx.iter().zip(scale.iter()).map(|(d, s)| (*d / *s).abs()).fold(T::zero(), |a, b| a.max(b));
        if rel <= T::default_epsilon() * T::lit(16.0) {
            return Ok(x);
        }
    }
    let f = field.rhs(&x, heat, &th)?;
    let rel = f.iter().zip(scale.iter()).map(|(d, s)| (*d / *s).abs()).fold(T::zero(), |a, b| a.max(b));
    if rel <= T::lit(1e-8) {
        Ok(x)
    } else {
        Err(Error::Evaluation("steady-state Newton iteration did not converge".into()))
    }
}

/// Polished root at the nominal parameters and heat inputs.
pub fn nominal_refined_steady_state() -> Result<DVector<f64>> {
    refined_steady_state(&Cstr4Params::nominal(), &DVector::from_column_slice(&NOMINAL_HEAT))
}
