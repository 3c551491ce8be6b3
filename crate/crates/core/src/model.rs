//! Discrete-time nonlinear models, the parameter-augmented system built on top
//! of them, linearization and noisy simulation.

use std::collections::BTreeMap;
use std::io::Write;
use std::marker::PhantomData;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dimensions of a model: states, inputs, outputs and unknown parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub states: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub params: usize,
}

impl Dims {
    pub fn augmented(&self) -> usize {
        self.states + self.params
    }
}

/// Partial derivatives of the transition map.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionJacobians<T: Real> {
    /// `n_x × n_x`
    pub fx: DMatrix<T>,
    /// `n_x × n_u`
    pub fu: DMatrix<T>,
    /// `n_x × n_p`
    pub ftheta: DMatrix<T>,
}

/// Partial derivatives of the output map.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputJacobians<T: Real> {
    /// `n_y × n_x`
    pub hx: DMatrix<T>,
    /// `n_y × n_p`
    pub htheta: DMatrix<T>,
}

/// `x⁺ = f(x, u, θ)`, `y = h(x, θ)`.
///
/// Analytic Jacobians are optional; when a model returns `None` the central
/// difference fallback in [`transition_jacobians`] and [`output_jacobians`] is used.
pub trait NonlinearModel<T: Real>: Send + Sync {
    fn dims(&self) -> Dims;

    fn transition(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>>;

    fn output(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>>;

    fn analytic_transition_jacobians(&self, _x: &DVector<T>, _u: &DVector<T>, _theta: &DVector<T>) -> Option<Result<TransitionJacobians<T>>> {
        None
    }

    fn analytic_output_jacobians(&self, _x: &DVector<T>, _theta: &DVector<T>) -> Option<Result<OutputJacobians<T>>> {
        None
    }

    /// Jacobians whose sparsity describes which variables act directly on which.
    ///
    /// Defaults to the transition Jacobians. Sampled models whose one-step map
    /// mixes every variable (Runge-Kutta stages fill in the pattern) override this
    /// with the Jacobians of the underlying vector field.
    fn coupling_jacobians(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<(TransitionJacobians<T>, OutputJacobians<T>)> {
        Ok((transition_jacobians(self, x, u, theta)?, output_jacobians(self, x, theta)?))
    }

    fn state_names(&self) -> Vec<String> {
        numbered("x", self.dims().states)
    }

    fn input_names(&self) -> Vec<String> {
        numbered("u", self.dims().inputs)
    }

    fn output_names(&self) -> Vec<String> {
        numbered("y", self.dims().outputs)
    }

    fn param_names(&self) -> Vec<String> {
        numbered("theta", self.dims().params)
    }

    /// State names followed by parameter names.
    fn augmented_names(&self) -> Vec<String> {
        let mut names = self.state_names();
        names.extend(self.param_names());
        names
    }
}

pub(crate) fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

macro_rules! delegate_model {
    ($($target:ty),*) => {$(
        impl<T: Real, M: NonlinearModel<T> + ?Sized> NonlinearModel<T> for $target {
            fn dims(&self) -> Dims {
                (**self).dims()
            }
            fn transition(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
                (**self).transition(x, u, theta)
            }
            fn output(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
                (**self).output(x, theta)
            }
            fn analytic_transition_jacobians(
                &self,
                x: &DVector<T>,
                u: &DVector<T>,
                theta: &DVector<T>,
            ) -> Option<Result<TransitionJacobians<T>>> {
                (**self).analytic_transition_jacobians(x, u, theta)
            }
            fn analytic_output_jacobians(
                &self,
                x: &DVector<T>,
                theta: &DVector<T>,
            ) -> Option<Result<OutputJacobians<T>>> {
                (**self).analytic_output_jacobians(x, theta)
            }
            fn coupling_jacobians(
                &self,
                x: &DVector<T>,
                u: &DVector<T>,
                theta: &DVector<T>,
            ) -> Result<(TransitionJacobians<T>, OutputJacobians<T>)> {
                (**self).coupling_jacobians(x, u, theta)
            }
            fn state_names(&self) -> Vec<String> {
                (**self).state_names()
            }
            fn input_names(&self) -> Vec<String> {
                (**self).input_names()
            }
            fn output_names(&self) -> Vec<String> {
                (**self).output_names()
            }
            fn param_names(&self) -> Vec<String> {
                (**self).param_names()
            }
        }
    )*};
}

delegate_model!(&M, Arc<M>, Box<M>);

pub(crate) fn check_len<T: Real>(what: &str, v: &DVector<T>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension(format!("{what} has length {}, expected {expected}", v.len())));
    }
    Ok(())
}

pub(crate) fn check_finite<T: Real>(which: &'static str, m: &DMatrix<T>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFiniteJacobian { which, row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Central differences of `f` around `at` with per-coordinate step
/// `max(h, h·|value|)`, `h` being [`Real::fd_step`].
pub fn central_difference<T, F>(f: F, at: &DVector<T>, out_dim: usize) -> Result<DMatrix<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let h0 = T::fd_step();
    let mut jac = DMatrix::zeros(out_dim, at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        let v = at[j];
        let h = h0.max(h0 * v.abs());
        probe[j] = v + h;
        let plus = f(&probe)?;
        probe[j] = v - h;
        let minus = f(&probe)?;
        probe[j] = v;
        let denom = (v + h) - (v - h);
        jac.set_column(j, &((plus - minus) / denom));
    }
    Ok(jac)
}

/// Transition Jacobians by central differences, ignoring any analytic form.
pub fn fd_transition_jacobians<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u: &DVector<T>,
    theta: &DVector<T>,
) -> Result<TransitionJacobians<T>> {
    let n = model.dims().states;
    let fx = central_difference(|p| model.transition(p, u, theta), x, n)?;
    let fu = central_difference(|p| model.transition(x, p, theta), u, n)?;
    let ftheta = central_difference(|p| model.transition(x, u, p), theta, n)?;
    Ok(TransitionJacobians { fx, fu, ftheta })
}

/// Output Jacobians by central differences.
pub fn fd_output_jacobians<T: Real, M: NonlinearModel<T> + ?Sized>(model: &M, x: &DVector<T>, theta: &DVector<T>) -> Result<OutputJacobians<T>> {
    let n = model.dims().outputs;
    let hx = central_difference(|p| model.output(p, theta), x, n)?;
    let htheta = central_difference(|p| model.output(x, p), theta, n)?;
    Ok(OutputJacobians { hx, htheta })
}

/// Transition Jacobians, analytic when the model provides them.
pub fn transition_jacobians<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u: &DVector<T>,
    theta: &DVector<T>,
) -> Result<TransitionJacobians<T>> {
    let d = model.dims();
    check_len("state", x, d.states)?;
    check_len("input", u, d.inputs)?;
    check_len("parameter", theta, d.params)?;
    let jac = match model.analytic_transition_jacobians(x, u, theta) {
        Some(j) => j?,
        None => fd_transition_jacobians(model, x, u, theta)?,
    };
    check_finite("df/dx", &jac.fx)?;
    check_finite("df/du", &jac.fu)?;
    check_finite("df/dtheta", &jac.ftheta)?;
    Ok(jac)
}

/// Output Jacobians, analytic when the model provides them.
pub fn output_jacobians<T: Real, M: NonlinearModel<T> + ?Sized>(model: &M, x: &DVector<T>, theta: &DVector<T>) -> Result<OutputJacobians<T>> {
    let d = model.dims();
    check_len("state", x, d.states)?;
    check_len("parameter", theta, d.params)?;
    let jac = match model.analytic_output_jacobians(x, theta) {
        Some(j) => j?,
        None => fd_output_jacobians(model, x, theta)?,
    };
    check_finite("dh/dx", &jac.hx)?;
    check_finite("dh/dtheta", &jac.htheta)?;
    Ok(jac)
}

/// Linear model `x⁺ = A x + B u + G θ`, `y = C x + D θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub g: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
}

impl<T: Real> LinearModel<T> {
    /// Parameter-free model.
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        let ny = c.nrows();
        Self::with_params(a, b, DMatrix::zeros(n, 0), c, DMatrix::zeros(ny, 0))
    }

    pub fn with_params(a: DMatrix<T>, b: DMatrix<T>, g: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || g.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != g.ncols() {
            return Err(Error::Dimension("inconsistent linear model blocks".into()));
        }
        Ok(Self { a, b, g, c, d })
    }
}

impl<T: Real> NonlinearModel<T> for LinearModel<T> {
    fn dims(&self) -> Dims {
        Dims { states: self.a.nrows(), inputs: self.b.ncols(), outputs: self.c.nrows(), params: self.g.ncols() }
    }

    fn transition(&self, x: &DVector<T>, u: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
        let d = self.dims();
        check_len("state", x, d.states)?;
        check_len("input", u, d.inputs)?;
        check_len("parameter", theta, d.params)?;
        Ok(&self.a * x + &self.b * u + &self.g * theta)
    }

    fn output(&self, x: &DVector<T>, theta: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.c * x + &self.d * theta)
    }

    fn analytic_transition_jacobians(&self, _x: &DVector<T>, _u: &DVector<T>, _theta: &DVector<T>) -> Option<Result<TransitionJacobians<T>>> {
        Some(Ok(TransitionJacobians { fx: self.a.clone(), fu: self.b.clone(), ftheta: self.g.clone() }))
    }

    fn analytic_output_jacobians(&self, _x: &DVector<T>, _theta: &DVector<T>) -> Option<Result<OutputJacobians<T>>> {
        Some(Ok(OutputJacobians { hx: self.c.clone(), htheta: self.d.clone() }))
    }
}

/// The system with parameters appended to the state: `x_θ = [x; θ]`,
/// `x_θ⁺ = [f(x, u, θ); θ]`, `y = h(x, θ)`.
#[derive(Debug, Clone)]
pub struct AugmentedModel<T: Real, M: NonlinearModel<T>> {
    base: M,
    _scalar: PhantomData<T>,
}

/// Linearization of the augmented system at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel<T: Real> {
    /// `(n_x+n_p) × (n_x+n_p)`, bottom rows `[0 I]`.
    pub a: DMatrix<T>,
    /// `(n_x+n_p) × n_u`
    pub b: DMatrix<T>,
    /// `n_y × (n_x+n_p)`
    pub c: DMatrix<T>,
    pub point: DVector<T>,
    pub input: DVector<T>,
}

pub fn augment<T: Real, M: NonlinearModel<T>>(model: M) -> AugmentedModel<T, M> {
    AugmentedModel { base: model, _scalar: PhantomData }
}

impl<T: Real, M: NonlinearModel<T>> AugmentedModel<T, M> {
    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn into_base(self) -> M {
        self.base
    }

    pub fn dims(&self) -> Dims {
        self.base.dims()
    }

    /// `n_x + n_p`
    pub fn dim(&self) -> usize {
        self.base.dims().augmented()
    }

    pub fn split(&self, z: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
        let d = self.base.dims();
        check_len("augmented state", z, d.augmented())?;
        Ok((z.rows(0, d.states).into_owned(), z.rows(d.states, d.params).into_owned()))
    }

    pub fn transition(&self, z: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let (x, theta) = self.split(z)?;
        let next = self.base.transition(&x, u, &theta)?;
        let d = self.base.dims();
        check_len("transition result", &next, d.states)?;
        let mut out = z.clone();
        out.rows_mut(0, d.states).copy_from(&next);
        Ok(out)
    }

    pub fn output(&self, z: &DVector<T>) -> Result<DVector<T>> {
        let (x, theta) = self.split(z)?;
        let y = self.base.output(&x, &theta)?;
        check_len("output result", &y, self.base.dims().outputs)?;
        Ok(y)
    }

    /// `A_θ = ∂f_θ/∂x_θ`, `B_θ = ∂f_θ/∂u`, `C_θ = ∂h_θ/∂x_θ` at `(z, u)`.
    pub fn linearize(&self, z: &DVector<T>, u: &DVector<T>) -> Result<LinearizedModel<T>> {
        let (x, theta) = self.split(z)?;
        let d = self.base.dims();
        let tj = transition_jacobians(&self.base, &x, u, &theta)?;
        let oj = output_jacobians(&self.base, &x, &theta)?;
        Ok(assemble_linearization(d, &tj, &oj, z.clone(), u.clone()))
    }

    /// `C_θ` alone, for the last sample of a window, which has no input.
    pub fn output_linearization(&self, z: &DVector<T>) -> Result<DMatrix<T>> {
        let (x, theta) = self.split(z)?;
        let d = self.base.dims();
        let oj = output_jacobians(&self.base, &x, &theta)?;
        let mut c = DMatrix::zeros(d.outputs, d.augmented());
        c.view_mut((0, 0), (d.outputs, d.states)).copy_from(&oj.hx);
        c.view_mut((0, d.states), (d.outputs, d.params)).copy_from(&oj.htheta);
        Ok(c)
    }
}

pub(crate) fn assemble_linearization<T: Real>(
    d: Dims,
    tj: &TransitionJacobians<T>,
    oj: &OutputJacobians<T>,
    point: DVector<T>,
    input: DVector<T>,
) -> LinearizedModel<T> {
    let n = d.augmented();
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (d.states, d.states)).copy_from(&tj.fx);
    a.view_mut((0, d.states), (d.states, d.params)).copy_from(&tj.ftheta);
    for i in d.states..n {
        a[(i, i)] = T::one();
    }
    let mut b = DMatrix::zeros(n, d.inputs);
    b.view_mut((0, 0), (d.states, d.inputs)).copy_from(&tj.fu);
    let mut c = DMatrix::zeros(d.outputs, n);
    c.view_mut((0, 0), (d.outputs, d.states)).copy_from(&oj.hx);
    c.view_mut((0, d.states), (d.outputs, d.params)).copy_from(&oj.htheta);
    LinearizedModel { a, b, c, point, input }
}

/// Gaussian process and measurement noise levels (absolute standard deviations
/// per channel) with the seed of the generator. Empty vectors mean no noise.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub process_std: Vec<f64>,
    pub measurement_std: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn new(process_std: Vec<f64>, measurement_std: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = Self { process_std, measurement_std, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.process_std.iter().chain(&self.measurement_std).any(|s| !(s.is_finite() && *s >= 0.0));
        if bad {
            return Err(Error::InvalidArgument("noise standard deviations must be finite and non-negative".into()));
        }
        Ok(())
    }
}

// Process and measurement noise draw from separate ChaCha streams so that
// changing one level leaves the other realization untouched.
const PROCESS_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;

struct GaussianSource {
    rng: ChaCha8Rng,
}

impl GaussianSource {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    fn draw<T: Real>(&mut self, std: &[f64], n: usize) -> DVector<T> {
        DVector::from_fn(n, |i, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            T::lit(std.get(i).copied().unwrap_or(0.0) * z)
        })
    }
}

/// Time-indexed simulation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// Sample period in hours.
    pub dt: T,
    pub states: Vec<DVector<T>>,
    /// One shorter than `states`: `inputs[t]` drives `states[t] → states[t+1]`.
    pub inputs: Vec<DVector<T>>,
    /// Noise-free outputs `h(x(t), θ)`.
    pub outputs: Vec<DVector<T>>,
    /// Measured outputs `h(x(t), θ) + v(t)`.
    pub measurements: Vec<DVector<T>>,
    pub theta: DVector<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(
        dt: T,
        states: Vec<DVector<T>>,
        inputs: Vec<DVector<T>>,
        outputs: Vec<DVector<T>>,
        measurements: Vec<DVector<T>>,
        theta: DVector<T>,
    ) -> Result<Self> {
        let n = states.len();
        if n == 0 || outputs.len() != n || measurements.len() != n || !(inputs.len() == n || inputs.len() + 1 == n) {
            return Err(Error::Dimension("trajectory sequences must share one length (inputs may be one shorter)".into()));
        }
        Ok(Self { dt, states, inputs, outputs, measurements, theta })
    }

    /// Number of samples (states).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `[x(t); θ]`
    pub fn augmented_state(&self, t: usize) -> DVector<T> {
        let x = &self.states[t];
        let mut z = DVector::zeros(x.len() + self.theta.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), self.theta.len()).copy_from(&self.theta);
        z
    }

    /// CSV with header `t,x_1..,u_1..,y_1..`; `y` are the measured outputs and the
    /// input cells of the final row are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let nx = self.states[0].len();
        let nu = self.inputs.first().map_or(0, |u| u.len());
        let ny = self.measurements[0].len();
        let mut header = vec!["t".to_string()];
        header.extend(numbered("x", nx));
        header.extend(numbered("u", nu));
        header.extend(numbered("y", ny));
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![fmt_num(self.dt.as_f64() * t as f64)];
            row.extend(self.states[t].iter().map(|v| fmt_num(v.as_f64())));
            match self.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(|v| fmt_num(v.as_f64()))),
                None => row.extend(std::iter::repeat_n(String::new(), nu)),
            }
            row.extend(self.measurements[t].iter().map(|v| fmt_num(v.as_f64())));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest representation that round-trips, `.` decimal separator.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Runs the model over `inputs` from `x0`, adding Gaussian process noise to each
/// transition and measurement noise to each output.
pub fn simulate<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    x0: &DVector<T>,
    theta: &DVector<T>,
    inputs: &[DVector<T>],
    dt: T,
    noise: &NoiseSpec,
) -> Result<Trajectory<T>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("input sequence is empty".into()));
    }
    noise.validate()?;
    let d = model.dims();
    check_len("initial state", x0, d.states)?;
    check_len("parameter", theta, d.params)?;
    let mut process = GaussianSource::new(noise.seed, PROCESS_STREAM);
    let mut measurement = GaussianSource::new(noise.seed, MEASUREMENT_STREAM);

    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len() + 1);
    let mut measurements = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    for step in 0..=inputs.len() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let y = model.output(&x, theta).map_err(|e| at_step(e, step))?;
        check_len("output", &y, d.outputs)?;
        let v: DVector<T> = measurement.draw(&noise.measurement_std, d.outputs);
        measurements.push(&y + v);
        outputs.push(y);
        states.push(x.clone());
        if let Some(u) = inputs.get(step) {
            check_len("input", u, d.inputs)?;
            let w: DVector<T> = process.draw(&noise.process_std, d.states);
            x = model.transition(&x, u, theta).map_err(|e| at_step(e, step))? + w;
        }
    }
    Trajectory::new(dt, states, inputs.to_vec(), outputs, measurements, theta.clone())
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Evaluation(msg) => Error::Evaluation(format!("step {step}: {msg}")),
        other => other,
    }
}

type ModelCtor<T> = Box<dyn Fn() -> Arc<dyn NonlinearModel<T>> + Send + Sync>;

/// Models addressable by string id.
pub struct ModelRegistry<T: Real> {
    ctors: BTreeMap<String, ModelCtor<T>>,
}

impl<T: Real> Default for ModelRegistry<T> {
    fn default() -> Self {
        Self { ctors: BTreeMap::new() }
    }
}

impl<T: Real> ModelRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, id: &str, ctor: F)
    where
        F: Fn() -> Arc<dyn NonlinearModel<T>> + Send + Sync + 'static,
    {
        self.ctors.insert(id.to_string(), Box::new(ctor));
    }

    pub fn create(&self, id: &str) -> Result<Arc<dyn NonlinearModel<T>>> {
        self.ctors.get(id).map(|c| c()).ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ctors.keys().map(String::as_str)
    }
}
