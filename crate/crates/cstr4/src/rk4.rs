//! Classical fourth-order Runge-Kutta sampling of a continuous vector field,
//! with the exact Jacobian of the one-step map.

use dspe_core::model::{Dims, NonlinearModel, OutputJacobians, TransitionJacobians};
use dspe_core::{Error, Real, Result};
use nalgebra::{DMatrix, DVector};

/// Continuous-time `dx/dt = f(x, u, θ)` with `y = h(x, θ)`.
pub trait VectorField<T: Real>: Send + Sync {
    fn dims(&self) -> Dims;

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>>;

    /// `(∂f/∂x, ∂f/∂u, ∂f/∂θ)`
    fn rhs_jacobians(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<TransitionJacobians<T>>;

    fn output(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>>;

    fn output_jacobians(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<OutputJacobians<T>>;

    fn state_names(&self) -> Vec<String>;
    fn input_names(&self) -> Vec<String>;
    fn output_names(&self) -> Vec<String>;
    fn param_names(&self) -> Vec<String>;
}

/// Discrete-time model `x⁺ = Φ_Δt(x, u, θ)`.
#[derive(Debug, Clone)]
pub struct Rk4<V> {
    pub field: V,
    pub dt: f64,
}

/// Wraps `field` into its RK4 one-step map with sample time `dt` (hours).
pub fn discretize_rk4<V>(field: V, dt: f64) -> Result<Rk4<V>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sample time must be positive, got {dt}")));
    }
    Ok(Rk4 { field, dt })
}

/// One RK4 step of an arbitrary field.
pub fn rk4_step<T: Real, F>(f: F, x: &DVector<T>, h: T) -> Result<DVector<T>>
where
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let half = h / T::lit(2.0);
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * half))?;
    let k3 = f(&(x + &k2 * half))?;
    let k4 = f(&(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (h / T::lit(6.0)))
}

impl<V> Rk4<V> {
    fn h<T: Real>(&self) -> T {
        T::lit(self.dt)
    }

    /// Integrates `steps` substeps of `dt / steps` each.
    pub fn integrate<T: Real>(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>, steps: usize) -> Result<DVector<T>>
    where
        V: VectorField<T>,
    {
        let h = T::lit(self.dt / steps.max(1) as f64);
        let mut x = x.clone();
        for _ in 0..steps.max(1) {
            x = rk4_step(|s| self.field.rhs(s, u, theta), &x, h)?;
        }
        Ok(x)
    }
}

impl<T: Real, V: VectorField<T>> NonlinearModel<T> for Rk4<V> {
    fn dims(&self) -> Dims {
        self.field.dims()
    }

    fn transition(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
        rk4_step(|s| self.field.rhs(s, u, theta), x, self.h())
    }

    fn output(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
        self.field.output(x, theta)
    }

    // Chain rule through the four stages: with s_i the stage point and
    // k_i = f(s_i), ∂k_i = J_i·∂s_i + (direct u/θ terms).
    fn analytic_transition_jacobians(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Option<Result<TransitionJacobians<T>>> {
        Some((|| {
            let h: T = self.h();
            let half = h / T::lit(2.0);
            let n = x.len();
            let (nu, np) = (u.len(), theta.len());
            let mut dk_dx: Vec<DMatrix<T>> = Vec::with_capacity(4);
            let mut dk_du: Vec<DMatrix<T>> = Vec::with_capacity(4);
            let mut dk_dp: Vec<DMatrix<T>> = Vec::with_capacity(4);
            let mut s = x.clone();
            let mut ds_dx = DMatrix::identity(n, n);
            let mut ds_du = DMatrix::zeros(n, nu);
            let mut ds_dp = DMatrix::zeros(n, np);
            for stage in 0..4 {
                let k = self.field.rhs(&s, u, theta)?;
                let j = self.field.rhs_jacobians(&s, u, theta)?;
                let kx = &j.fx * &ds_dx;
                let ku = &j.fx * &ds_du + &j.fu;
                let kp = &j.fx * &ds_dp + &j.ftheta;
                let c = if stage < 2 { half } else { h };
                if stage < 3 {
                    s = x + &k * c;
                    ds_dx = DMatrix::identity(n, n) + &kx * c;
                    ds_du = &ku * c;
                    ds_dp = &kp * c;
                }
                dk_dx.push(kx);
                dk_du.push(ku);
                dk_dp.push(kp);
            }
            let w = h / T::lit(6.0);
            let two = T::lit(2.0);
            let comb = |m: &[DMatrix<T>]| (&m[0] + (&m[1] + &m[2]) * two + &m[3]) * w;
            Ok(TransitionJacobians { fx: DMatrix::identity(n, n) + comb(&dk_dx), fu: comb(&dk_du), ftheta: comb(&dk_dp) })
        })())
    }

    fn analytic_output_jacobians(&self, x: &DVector<T>, theta: &DVector<T>) -> Option<Result<OutputJacobians<T>>> {
        Some(self.field.output_jacobians(x, theta))
    }

    /// The vector field's own Jacobians: RK4 stages would couple every state
    /// with every other within one sample.
    fn coupling_jacobians(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<(TransitionJacobians<T>, OutputJacobians<T>)> {
        Ok((self.field.rhs_jacobians(x, u, theta)?, self.field.output_jacobians(x, theta)?))
    }

    fn state_names(&self) -> Vec<String> {
        self.field.state_names()
    }

    fn input_names(&self) -> Vec<String> {
        self.field.input_names()
    }

    fn output_names(&self) -> Vec<String> {
        self.field.output_names()
    }

    fn param_names(&self) -> Vec<String> {
        self.field.param_names()
    }
}
