//! Moving-horizon estimation of the augmented state: local problems with
//! neighbour estimates as known signals, the centralized special case and the
//! distributed coordinator.

mod dmhe;
mod nls;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{check_len, output_jacobians, transition_jacobians, NonlinearModel};
use crate::scalar::Real;

pub use dmhe::{dmhe_step, CoordinatorState, DmheStep, Message, SubsystemEstimator};
pub use nls::{nls_solve, Bounds, FnResidual, NlsSolution, ResidualMap, SolverOptions};

/// Penalty multiplier on box violations of propagated window states, per unit of
/// the box width.
const BOX_PENALTY: f64 = 1e4;

/// Weights and limits of one estimator, in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct MheConfig<T: Real> {
    pub horizon: usize,
    /// Process-noise covariance over the local original states.
    pub q: DMatrix<T>,
    /// Measurement-noise covariance over the local outputs.
    pub r: DMatrix<T>,
    /// Arrival-cost covariance over the local augmented state.
    pub p: DMatrix<T>,
    /// Box on the local augmented state.
    pub bounds: Option<Bounds<T>>,
    pub solver: SolverOptions,
}

impl<T: Real> MheConfig<T> {
    pub fn new(horizon: usize, q: DMatrix<T>, r: DMatrix<T>, p: DMatrix<T>) -> Result<Self> {
        let c = MheConfig { horizon, q, r, p, bounds: None, solver: SolverOptions::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_bounds(mut self, bounds: Bounds<T>) -> Result<Self> {
        bounds.validate()?;
        if bounds.len() != self.p.nrows() {
            return Err(Error::Dimension(format!("{} bounds for {} augmented entries", bounds.len(), self.p.nrows())));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            inverse_sqrt(name, m)?;
        }
        Ok(())
    }
}

/// `L⁻¹` with `M = L·Lᵀ`, so that `‖e‖²_{M⁻¹} = ‖L⁻¹e‖²`.
pub fn inverse_sqrt<T: Real>(name: &str, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let tol = T::lit(1e-10) * m.amax().max(T::one());
    if (m - m.transpose()).amax() > tol {
        return Err(Error::NotPositiveDefinite(format!("{name} is not symmetric")));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))?;
    chol.l().solve_lower_triangular(&DMatrix::identity(n, n)).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

/// `‖x0 − prior‖²_{P⁻¹}`
pub fn arrival_cost<T: Real>(x0: &DVector<T>, prior: &DVector<T>, p: &DMatrix<T>) -> Result<T> {
    if x0.len() != prior.len() || p.nrows() != x0.len() {
        return Err(Error::Dimension("arrival cost operands disagree".into()));
    }
    Ok((inverse_sqrt("P", p)? * (x0 - prior)).norm_squared())
}

/// One window of one local estimator. Indices refer to the full model.
///
/// With `L = inputs.len()` the window spans `L + 1` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MheProblem<T: Real> {
    pub states: Vec<usize>,
    pub params: Vec<usize>,
    pub outputs: Vec<usize>,
    /// Full input vectors, `L` of them.
    pub inputs: Vec<DVector<T>>,
    /// Local measurements, `L + 1` of them.
    pub measurements: Vec<DVector<T>>,
    /// Full augmented vectors supplying every non-local entry, `L + 1` of them.
    pub external: Vec<DVector<T>>,
    /// Local augmented prior at the window start.
    pub prior: DVector<T>,
    /// Local augmented positions held at the prior with zero disturbance.
    pub frozen: Vec<usize>,
    /// Replaces the configured arrival covariance.
    pub arrival_covariance: Option<DMatrix<T>>,
    /// Starting point for the solver: initial local state then disturbances.
    pub warm_start: Option<(DVector<T>, Vec<DVector<T>>)>,
}

impl<T: Real> MheProblem<T> {
    pub fn local_dim(&self) -> usize {
        self.states.len() + self.params.len()
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MheResult<T: Real> {
    /// Optimal local augmented states over the window.
    pub window: Vec<DVector<T>>,
    /// Optimal disturbances on the local states, one per transition.
    pub disturbances: Vec<DVector<T>>,
    /// Last window element, clamped into the box.
    pub estimate: DVector<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
}

struct LocalWindow<'a, T: Real, M: NonlinearModel<T> + ?Sized> {
    model: &'a M,
    pb: &'a MheProblem<T>,
    nx: usize,
    wp: DMatrix<T>,
    wq: DMatrix<T>,
    wr: DMatrix<T>,
    bounds: Option<Bounds<T>>,
}

impl<T: Real, M: NonlinearModel<T> + ?Sized> LocalWindow<'_, T, M> {
    fn n_loc(&self) -> usize {
        self.pb.local_dim()
    }

    fn ns(&self) -> usize {
        self.pb.states.len()
    }

    fn full(&self, l: usize, z: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let ext = &self.pb.external[l];
        let mut x = ext.rows(0, self.nx).into_owned();
        let mut th = ext.rows(self.nx, ext.len() - self.nx).into_owned();
        for (k, &i) in self.pb.states.iter().enumerate() {
            x[i] = z[k];
        }
        for (k, &p) in self.pb.params.iter().enumerate() {
            th[p] = z[self.ns() + k];
        }
        (x, th)
    }

    fn step(&self, l: usize, z: &DVector<T>, w: &[T]) -> Result<DVector<T>> {
        let (x, th) = self.full(l, z);
        let xn = self.model.transition(&x, &self.pb.inputs[l], &th)?;
        let mut out = z.clone();
        for (k, &i) in self.pb.states.iter().enumerate() {
            out[k] = xn[i] + w[k];
        }
        Ok(out)
    }

    fn step_jacobian(&self, l: usize, z: &DVector<T>) -> Result<DMatrix<T>> {
        let (x, th) = self.full(l, z);
        let tj = transition_jacobians(self.model, &x, &self.pb.inputs[l], &th)?;
        let (ns, n) = (self.ns(), self.n_loc());
        let mut f = DMatrix::identity(n, n);
        for (a, &i) in self.pb.states.iter().enumerate() {
            for (b, &j) in self.pb.states.iter().enumerate() {
                f[(a, b)] = tj.fx[(i, j)];
            }
            for (b, &p) in self.pb.params.iter().enumerate() {
                f[(a, ns + b)] = tj.ftheta[(i, p)];
            }
        }
        Ok(f)
    }

    fn output(&self, l: usize, z: &DVector<T>) -> Result<DVector<T>> {
        let (x, th) = self.full(l, z);
        Ok(self.model.output(&x, &th)?.select_rows(&self.pb.outputs))
    }

    fn output_jacobian(&self, l: usize, z: &DVector<T>) -> Result<DMatrix<T>> {
        let (x, th) = self.full(l, z);
        let oj = output_jacobians(self.model, &x, &th)?;
        let hx = oj.hx.select_rows(&self.pb.outputs).select_columns(&self.pb.states);
        let hp = oj.htheta.select_rows(&self.pb.outputs).select_columns(&self.pb.params);
        let mut h = DMatrix::zeros(self.pb.outputs.len(), self.n_loc());
        h.view_mut((0, 0), hx.shape()).copy_from(&hx);
        h.view_mut((0, self.ns()), hp.shape()).copy_from(&hp);
        Ok(h)
    }

    fn n_dec(&self) -> usize {
        self.n_loc() + self.pb.horizon() * self.ns()
    }

    fn residual_len(&self) -> usize {
        let boxed = if self.bounds.is_some() { self.pb.horizon() * self.n_loc() } else { 0 };
        self.n_loc() + self.pb.horizon() * self.ns() + (self.pb.horizon() + 1) * self.pb.outputs.len() + boxed
    }

    /// Window states from a decision vector.
    fn rollout(&self, d: &DVector<T>) -> Result<Vec<DVector<T>>> {
        let (n, ns) = (self.n_loc(), self.ns());
        let mut z = d.rows(0, n).into_owned();
        let mut out = Vec::with_capacity(self.pb.horizon() + 1);
        for l in 0..self.pb.horizon() {
            let w = d.rows(n + l * ns, ns);
            let next = self.step(l, &z, w.as_slice())?;
            out.push(std::mem::replace(&mut z, next));
        }
        out.push(z);
        Ok(out)
    }

    fn eval(&self, d: &DVector<T>, want_jac: bool) -> Result<(DVector<T>, Option<DMatrix<T>>)> {
        let (n, ns, big_l) = (self.n_loc(), self.ns(), self.pb.horizon());
        let ny = self.pb.outputs.len();
        let nd = self.n_dec();
        let mut r = DVector::zeros(self.residual_len());
        let mut jac = want_jac.then(|| DMatrix::zeros(self.residual_len(), nd));
        let mut row = 0;

        let z0 = d.rows(0, n).into_owned();
        r.rows_mut(row, n).copy_from(&(&self.wp * (&z0 - &self.pb.prior)));
        if let Some(j) = jac.as_mut() {
            j.view_mut((row, 0), (n, n)).copy_from(&self.wp);
        }
        row += n;
        for l in 0..big_l {
            let w = d.rows(n + l * ns, ns).into_owned();
            r.rows_mut(row, ns).copy_from(&(&self.wq * w));
            if let Some(j) = jac.as_mut() {
                j.view_mut((row, n + l * ns), (ns, ns)).copy_from(&self.wq);
            }
            row += ns;
        }

        let mut z = z0;
        // ∂z(l)/∂d
        let mut s = want_jac.then(|| {
            let mut s = DMatrix::zeros(n, nd);
            s.view_mut((0, 0), (n, n)).fill_with_identity();
            s
        });
        for l in 0..=big_l {
            let y = self.output(l, &z)?;
            let e = &self.pb.measurements[l] - y;
            r.rows_mut(row, ny).copy_from(&(&self.wr * e));
            if let (Some(j), Some(s)) = (jac.as_mut(), s.as_ref()) {
                let h = self.output_jacobian(l, &z)?;
                j.view_mut((row, 0), (ny, nd)).copy_from(&(-(&self.wr * h) * s));
            }
            row += ny;
            if let (Some(b), true) = (&self.bounds, l > 0) {
                for k in 0..n {
                    let width = (b.upper[k] - b.lower[k]).min(T::lit(1e300));
                    let scale = if width.is_finite() && width > T::zero() { T::lit(BOX_PENALTY) / width } else { T::lit(BOX_PENALTY) };
                    let (viol, sign) = if z[k] < b.lower[k] {
                        (b.lower[k] - z[k], -T::one())
                    } else if z[k] > b.upper[k] {
                        (z[k] - b.upper[k], T::one())
                    } else {
                        (T::zero(), T::zero())
                    };
                    r[row + k] = scale * viol;
                    if let (Some(j), Some(s)) = (jac.as_mut(), s.as_ref()) {
                        if sign != T::zero() {
                            j.row_mut(row + k).copy_from(&(s.row(k) * (scale * sign)));
                        }
                    }
                }
                row += n;
            }
            if l < big_l {
                let w = d.rows(n + l * ns, ns).into_owned();
                if let Some(sm) = s.as_mut() {
                    let f = self.step_jacobian(l, &z)?;
                    let mut next = f * &*sm;
                    for k in 0..ns {
                        next[(k, n + l * ns + k)] += T::one();
                    }
                    *sm = next;
                }
                z = self.step(l, &z, w.as_slice())?;
            }
        }
        debug_assert_eq!(row, r.len());
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("window residual is not finite".into()));
        }
        Ok((r, jac))
    }
}

impl<T: Real, M: NonlinearModel<T> + ?Sized> ResidualMap<T> for LocalWindow<'_, T, M> {
    fn residual(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.eval(x, false)?.0)
    }

    fn residual_and_jacobian(&self, x: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        let (r, j) = self.eval(x, true)?;
        Ok((r, j.expect("jacobian requested")))
    }
}

fn check_problem<T: Real, M: NonlinearModel<T> + ?Sized>(model: &M, pb: &MheProblem<T>, cfg: &MheConfig<T>) -> Result<()> {
    let d = model.dims();
    let n = pb.local_dim();
    let big_l = pb.horizon();
    if pb.measurements.len() != big_l + 1 || pb.external.len() != big_l + 1 {
        return Err(Error::Dimension(format!(
            "window of {big_l} transitions needs {} measurements and external vectors, got {} and {}",
            big_l + 1,
            pb.measurements.len(),
            pb.external.len()
        )));
    }
    if pb.states.iter().any(|&i| i >= d.states) || pb.params.iter().any(|&p| p >= d.params) || pb.outputs.iter().any(|&k| k >= d.outputs) {
        return Err(Error::InvalidArgument("local index outside the model".into()));
    }
    check_len("prior", &pb.prior, n)?;
    for u in &pb.inputs {
        check_len("input", u, d.inputs)?;
    }
    for y in &pb.measurements {
        check_len("measurement", y, pb.outputs.len())?;
    }
    for e in &pb.external {
        check_len("external vector", e, d.augmented())?;
    }
    if cfg.q.nrows() != pb.states.len() || cfg.r.nrows() != pb.outputs.len() || cfg.p.nrows() != n {
        return Err(Error::Dimension(format!(
            "weights are {}/{}/{} square for {} states, {} outputs, {n} augmented entries",
            cfg.q.nrows(),
            cfg.r.nrows(),
            cfg.p.nrows(),
            pb.states.len(),
            pb.outputs.len()
        )));
    }
    if let Some(&k) = pb.frozen.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidArgument(format!("frozen position {k} outside {n} local entries")));
    }
    Ok(())
}

/// Minimizes arrival, process and measurement terms over the window, the
/// unselected channels evolving open loop from their prior.
pub fn solve_local_mhe<T: Real, M: NonlinearModel<T> + ?Sized>(model: &M, pb: &MheProblem<T>, cfg: &MheConfig<T>) -> Result<MheResult<T>> {
    check_problem(model, pb, cfg)?;
    let p = pb.arrival_covariance.as_ref().unwrap_or(&cfg.p);
    if p.nrows() != pb.local_dim() {
        return Err(Error::Dimension("arrival covariance does not match the local state".into()));
    }
    let win = LocalWindow {
        model,
        pb,
        nx: model.dims().states,
        wp: inverse_sqrt("P", p)?,
        wq: inverse_sqrt("Q", &cfg.q)?,
        wr: inverse_sqrt("R", &cfg.r)?,
        bounds: cfg.bounds.clone(),
    };
    let (n, ns, big_l) = (win.n_loc(), win.ns(), pb.horizon());

    let mut d0 = DVector::zeros(win.n_dec());
    match &pb.warm_start {
        Some((z0, ws)) if z0.len() == n && ws.len() == big_l && ws.iter().all(|w| w.len() == ns) => {
            d0.rows_mut(0, n).copy_from(z0);
            for (l, w) in ws.iter().enumerate() {
                d0.rows_mut(n + l * ns, ns).copy_from(w);
            }
        }
        _ => d0.rows_mut(0, n).copy_from(&pb.prior),
    }
    let mut frozen = Vec::new();
    for &k in &pb.frozen {
        d0[k] = pb.prior[k];
        frozen.push(k);
        if k < ns {
            for l in 0..big_l {
                d0[n + l * ns + k] = T::zero();
                frozen.push(n + l * ns + k);
            }
        }
    }
    let mut dec_bounds = Bounds::unbounded(win.n_dec());
    if let Some(b) = &cfg.bounds {
        dec_bounds.lower.rows_mut(0, n).copy_from(&b.lower);
        dec_bounds.upper.rows_mut(0, n).copy_from(&b.upper);
    }
    let sol = nls_solve(&win, &d0, Some(&dec_bounds), &frozen, &cfg.solver)?;
    let window = win.rollout(&sol.x)?;
    let last = window.last().expect("window holds at least one sample");
    let estimate = match &cfg.bounds {
        Some(b) => b.clamp(last),
        None => last.clone(),
    };
    Ok(MheResult {
        disturbances: (0..big_l).map(|l| sol.x.rows(n + l * ns, ns).into_owned()).collect(),
        estimate,
        window,
        objective: sol.objective,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// One estimator over the whole augmented state.
pub fn solve_centralized_mhe<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    inputs: Vec<DVector<T>>,
    measurements: Vec<DVector<T>>,
    prior: DVector<T>,
    unselected: &[usize],
    cfg: &MheConfig<T>,
) -> Result<MheResult<T>> {
    let d = model.dims();
    let external = vec![prior.clone(); measurements.len()];
    let pb = MheProblem {
        states: (0..d.states).collect(),
        params: (0..d.params).collect(),
        outputs: (0..d.outputs).collect(),
        inputs,
        measurements,
        external,
        prior,
        frozen: unselected.to_vec(),
        arrival_covariance: None,
        warm_start: None,
    };
    solve_local_mhe(model, &pb, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, LinearModel, NoiseSpec};
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn arrival_cost_examples() {
        assert_eq!(arrival_cost(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), &DMatrix::identity(2, 2)).unwrap(), 0.0);
        assert_relative_eq!(arrival_cost(&v(&[3.0, 4.0]), &v(&[0.0, 0.0]), &DMatrix::identity(2, 2)).unwrap(), 25.0, epsilon = 1e-12);
        let p = DMatrix::from_diagonal(&v(&[0.01, 0.0049]));
        assert_relative_eq!(arrival_cost(&v(&[0.1, 0.07]), &v(&[0.0, 0.0]), &p).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_must_be_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(MheConfig::new(3, bad, DMatrix::identity(1, 1), DMatrix::identity(2, 2)), Err(Error::NotPositiveDefinite(_))));
        assert!(MheConfig::<f64>::new(0, DMatrix::identity(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).is_err());
    }

    fn plant() -> LinearModel<f64> {
        // x⁺ = A x + g θ, y = x1
        LinearModel::with_params(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn exact_prior_recovers_truth() {
        let model = plant();
        let inputs = vec![v(&[0.0]); 6];
        let theta = v(&[2.0]);
        let traj = simulate(&model, &v(&[1.0, 0.5]), &theta, &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
        let cfg = MheConfig::new(6, DMatrix::identity(2, 2) * 0.01, DMatrix::identity(1, 1) * 0.01, DMatrix::identity(3, 3) * 0.1).unwrap();
        let prior = traj.augmented_state(0);
        let res = solve_centralized_mhe(&model, inputs, traj.measurements.clone(), prior, &[], &cfg).unwrap();
        assert!(res.converged);
        assert!(res.objective < 1e-16);
        assert_relative_eq!(res.estimate, traj.augmented_state(6), epsilon = 1e-9);
    }

    #[test]
    fn frozen_parameter_runs_open_loop() {
        let model = plant();
        let inputs = vec![v(&[0.0]); 5];
        let traj = simulate(&model, &v(&[1.0, 0.5]), &v(&[2.0]), &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
        let cfg = MheConfig::new(5, DMatrix::identity(2, 2) * 0.01, DMatrix::identity(1, 1) * 0.01, DMatrix::identity(3, 3) * 0.1).unwrap();
        let prior = v(&[0.8, 0.4, 1.5]);
        let res = solve_centralized_mhe(&model, inputs.clone(), traj.measurements.clone(), prior.clone(), &[2], &cfg).unwrap();
        for z in &res.window {
            assert_eq!(z[2], 1.5);
        }
        // the window satisfies the recursion with the optimal disturbances
        for ((pair, u), w) in res.window.windows(2).zip(&inputs).zip(&res.disturbances).take(5) {
            let next = model.transition(&pair[0].rows(0, 2).into_owned(), u, &v(&[1.5])).unwrap() + w;
            assert_relative_eq!(next, pair[1].rows(0, 2).into_owned(), epsilon = 1e-10);
        }
        // frozen state channel: neither initial value nor disturbance moves
        let res = solve_centralized_mhe(&model, inputs, traj.measurements.clone(), prior.clone(), &[1], &cfg).unwrap();
        assert_eq!(res.window[0][1], 0.4);
        assert!(res.disturbances.iter().all(|w| w[1] == 0.0));
    }

    #[test]
    fn single_sample_window() {
        let model = plant();
        let cfg = MheConfig::new(3, DMatrix::identity(2, 2), DMatrix::identity(1, 1), DMatrix::identity(3, 3)).unwrap();
        let res = solve_centralized_mhe(&model, vec![], vec![v(&[1.0])], v(&[0.0, 0.0, 0.0]), &[], &cfg).unwrap();
        // one measurement, unit weights: the prior and the data split the difference
        assert_relative_eq!(res.estimate[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn box_bounds_hold_on_the_estimate() {
        let model = plant();
        let cfg = MheConfig::new(3, DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 1e-4, DMatrix::identity(3, 3))
            .unwrap()
            .with_bounds(Bounds::new(v(&[-1.0, -1.0, 0.0]), v(&[0.3, 1.0, 3.0])).unwrap())
            .unwrap();
        let res = solve_centralized_mhe(&model, vec![], vec![v(&[1.0])], v(&[0.0, 0.0, 1.0]), &[], &cfg).unwrap();
        assert!(cfg.bounds.as_ref().unwrap().contains(&res.estimate));
        assert_relative_eq!(res.estimate[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_window_rejected() {
        let model = plant();
        let cfg = MheConfig::new(3, DMatrix::identity(2, 2), DMatrix::identity(1, 1), DMatrix::identity(3, 3)).unwrap();
        assert!(solve_centralized_mhe(&model, vec![v(&[0.0])], vec![v(&[1.0])], v(&[0.0, 0.0, 0.0]), &[], &cfg).is_err());
    }
}
