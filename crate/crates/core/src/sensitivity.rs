//! Output sensitivities, the windowed sensitivity matrix of the augmented
//! system, the matching observability matrix and rank/conditioning reports.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fmt_num, output_jacobians, transition_jacobians, AugmentedModel, NonlinearModel, Trajectory};
use crate::scalar::Real;

/// Default data window length.
pub const DEFAULT_WINDOW: usize = 10;

/// Largest condition number still called well conditioned.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e8;

/// State and output sensitivities at one sample.
///
/// For parameter sensitivities `state` is `∂x(t)/∂θ` (`n_x × n_p`) and `output`
/// is `∂y(t)/∂θ`; for initial-state sensitivities they are `∂x(t)/∂x(0)` and
/// `∂y(t)/∂x(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState<T: Real> {
    pub t: usize,
    pub state: DMatrix<T>,
    pub output: DMatrix<T>,
}

/// Forward recursion `S_xθ(t+1) = f_x S_xθ(t) + f_θ` from `S_xθ(0) = 0`, with
/// `S_yθ(t) = h_x S_xθ(t) + h_θ`.
pub fn propagate_param_sensitivity<T: Real, M: NonlinearModel<T> + ?Sized>(model: &M, traj: &Trajectory<T>) -> Result<Vec<SensitivityState<T>>> {
    let d = model.dims();
    let mut s = DMatrix::zeros(d.states, d.params);
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let x = &traj.states[t];
        let oj = output_jacobians(model, x, &traj.theta)?;
        out.push(SensitivityState { t, output: &oj.hx * &s + &oj.htheta, state: s.clone() });
        if let Some(u) = traj.inputs.get(t) {
            if t + 1 < traj.len() {
                let tj = transition_jacobians(model, x, u, &traj.theta)?;
                s = &tj.fx * &s + &tj.ftheta;
            }
        }
    }
    Ok(out)
}

/// Forward recursion `S_xx0(t+1) = f_x S_xx0(t)` from the identity, with
/// `S_yx0(t) = h_x S_xx0(t)`.
pub fn propagate_initial_state_sensitivity<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    traj: &Trajectory<T>,
) -> Result<Vec<SensitivityState<T>>> {
    let d = model.dims();
    let mut s = DMatrix::identity(d.states, d.states);
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let x = &traj.states[t];
        let oj = output_jacobians(model, x, &traj.theta)?;
        out.push(SensitivityState { t, output: &oj.hx * &s, state: s.clone() });
        if let Some(u) = traj.inputs.get(t) {
            if t + 1 < traj.len() {
                let tj = transition_jacobians(model, x, u, &traj.theta)?;
                s = &tj.fx * &s;
            }
        }
    }
    Ok(out)
}

/// Stacked sensitivities of the outputs over a window with respect to the
/// augmented state at the start of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix<T: Real> {
    /// `(N·n_y) × (n_x+n_p)`
    pub matrix: DMatrix<T>,
    pub window: usize,
    /// Last sample of the window.
    pub anchor: usize,
    /// One label per column (augmented-state entry).
    pub labels: Vec<String>,
}

impl<T: Real> SensitivityMatrix<T> {
    pub fn outputs_per_sample(&self) -> usize {
        self.matrix.nrows() / self.window.max(1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.labels.join(","))?;
        for r in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(r).iter().map(|v| fmt_num(v.as_f64())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `[C_0; C_1 A_0; C_2 A_1 A_0; …]` for `c.len() == a.len() + 1` blocks.
pub fn stacked_products<T: Real>(a: &[DMatrix<T>], c: &[DMatrix<T>]) -> Result<DMatrix<T>> {
    if c.is_empty() || c.len() != a.len() + 1 {
        return Err(Error::Dimension(format!("{} output blocks need {} transition blocks, got {}", c.len(), c.len().saturating_sub(1), a.len())));
    }
    let n = c[0].ncols();
    let ny: usize = c.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(ny, n);
    let mut phi = DMatrix::<T>::identity(n, n);
    let mut row = 0;
    for (k, ck) in c.iter().enumerate() {
        if ck.ncols() != n {
            return Err(Error::Dimension("output blocks disagree on column count".into()));
        }
        out.view_mut((row, 0), (ck.nrows(), n)).copy_from(&(ck * &phi));
        row += ck.nrows();
        if let Some(ak) = a.get(k) {
            phi = ak * phi;
        }
    }
    Ok(out)
}

/// `(A_θ(i) for i = t−N+1..t−1, C_θ(i) for i = t−N+1..t)`
pub type WindowLinearizations<T> = (Vec<DMatrix<T>>, Vec<DMatrix<T>>);

/// Augmented transition and output Jacobians over the window ending at `t`.
pub fn window_linearizations<T: Real, M: NonlinearModel<T>>(
    aug: &AugmentedModel<T, M>,
    traj: &Trajectory<T>,
    t: usize,
    window: usize,
) -> Result<WindowLinearizations<T>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must hold at least one sample".into()));
    }
    if t + 1 < window || t >= traj.len() {
        return Err(Error::WindowOutOfRange { t, window });
    }
    let start = t + 1 - window;
    let mut a = Vec::with_capacity(window - 1);
    let mut c = Vec::with_capacity(window);
    for i in start..=t {
        let z = traj.augmented_state(i);
        if i < t {
            let u = traj.inputs.get(i).ok_or(Error::WindowOutOfRange { t, window })?;
            let lin = aug.linearize(&z, u)?;
            a.push(lin.a);
            c.push(lin.c);
        } else {
            c.push(aug.output_linearization(&z)?);
        }
    }
    Ok((a, c))
}

/// `S_θ(t)`: rows `C_θ(i)·A_θ(i−1)···A_θ(t−N+1)` for `i = t−N+1..t`.
pub fn build_sensitivity_matrix<T: Real, M: NonlinearModel<T>>(
    aug: &AugmentedModel<T, M>,
    traj: &Trajectory<T>,
    t: usize,
    window: usize,
) -> Result<SensitivityMatrix<T>> {
    let (a, c) = window_linearizations(aug, traj, t, window)?;
    Ok(SensitivityMatrix { matrix: stacked_products(&a, &c)?, window, anchor: t, labels: aug.base().augmented_names() })
}

/// Observability matrix `O(t)` of the linearized augmented system over the same
/// window; identical to [`build_sensitivity_matrix`]'s matrix.
pub fn build_observability_matrix<T: Real, M: NonlinearModel<T>>(
    aug: &AugmentedModel<T, M>,
    traj: &Trajectory<T>,
    t: usize,
    window: usize,
) -> Result<DMatrix<T>> {
    let (a, c) = window_linearizations(aug, traj, t, window)?;
    stacked_products(&a, &c)
}

/// Relative sensitivities: column `j` times `state_scales[j]`, each row of
/// output `k` divided by `output_scales[k]`.
pub fn normalize_sensitivity<T: Real>(
    s: &SensitivityMatrix<T>,
    state_scales: &DVector<T>,
    output_scales: &DVector<T>,
) -> Result<SensitivityMatrix<T>> {
    let m = &s.matrix;
    if state_scales.len() != m.ncols() {
        return Err(Error::Dimension(format!("{} state scales for {} columns", state_scales.len(), m.ncols())));
    }
    let ny = output_scales.len();
    if ny == 0 || m.nrows() != ny * s.window {
        return Err(Error::Dimension(format!("{ny} output scales do not tile {} rows over a window of {}", m.nrows(), s.window)));
    }
    let positive = |v: &DVector<T>| v.iter().all(|x| x.is_finite() && *x > T::zero());
    if !positive(state_scales) || !positive(output_scales) {
        return Err(Error::InvalidArgument("normalization scales must be strictly positive".into()));
    }
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[(i, j)] = m[(i, j)] * state_scales[j] / output_scales[i % ny];
        }
    }
    Ok(SensitivityMatrix { matrix: out, ..s.clone() })
}

/// Rank and conditioning of a sensitivity or observability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub rank: usize,
    /// `σ_max / σ_min` over the retained singular values.
    pub condition: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub full_rank: bool,
    pub well_conditioned: bool,
    /// Relative threshold: values above `rank_tol·σ_max` count toward the rank.
    pub rank_tol: f64,
    pub condition_limit: f64,
}

/// `max(rows, cols)·ε·1e3`
pub fn default_rank_tol<T: Real>(rows: usize, cols: usize) -> T {
    T::lit(rows.max(cols) as f64) * T::default_epsilon() * T::lit(1e3)
}

pub fn rank_and_condition<T: Real>(m: &DMatrix<T>, rank_tol: Option<T>) -> Result<ObservabilityReport> {
    rank_and_condition_with_limit(m, rank_tol, DEFAULT_CONDITION_LIMIT)
}

pub fn rank_and_condition_with_limit<T: Real>(m: &DMatrix<T>, rank_tol: Option<T>, condition_limit: f64) -> Result<ObservabilityReport> {
    if m.is_empty() {
        return Err(Error::InvalidArgument("matrix is empty".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd);
    }
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(m.nrows(), m.ncols()));
    let svd = m.clone().try_svd(false, false, T::default_epsilon(), 10_000).ok_or(Error::Svd)?;
    let mut sv: Vec<f64> = svd.singular_values.iter().map(|v| v.as_f64()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let cut = tol.as_f64() * smax;
    let rank = if smax > 0.0 { sv.iter().filter(|&&s| s > cut).count() } else { 0 };
    let condition = if rank == 0 { f64::INFINITY } else { smax / sv[rank - 1] };
    Ok(ObservabilityReport {
        rank,
        condition,
        full_rank: rank == m.nrows().min(m.ncols()) && rank == m.ncols(),
        well_conditioned: condition <= condition_limit,
        singular_values: sv,
        rank_tol: tol.as_f64(),
        condition_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{augment, simulate, Dims, LinearModel, NoiseSpec};
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn run_linear(model: &LinearModel<f64>, x0: &[f64], theta: &[f64], steps: usize) -> Trajectory<f64> {
        let inputs = vec![DVector::zeros(model.dims().inputs); steps];
        simulate(model, &v(x0), &v(theta), &inputs, 1.0, &NoiseSpec::noiseless()).unwrap()
    }

    #[test]
    fn parameter_sensitivity_is_a_geometric_sum() {
        // x⁺ = a x + θ
        let a = 0.7;
        let model = LinearModel::with_params(
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let traj = run_linear(&model, &[1.0], &[0.3], 8);
        let sens = propagate_param_sensitivity(&model, &traj).unwrap();
        assert_eq!(sens[0].state[(0, 0)], 0.0);
        for (t, s) in sens.iter().enumerate() {
            let expected: f64 = (0..t).map(|k| a.powi(k as i32)).sum();
            assert_relative_eq!(s.state[(0, 0)], expected, max_relative = 1e-14);
            assert_relative_eq!(s.output[(0, 0)], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn initial_state_sensitivity_is_a_matrix_power() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let model = LinearModel::new(a.clone(), DMatrix::zeros(2, 0), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let traj = run_linear(&model, &[1.0, -1.0], &[], 6);
        let sens = propagate_initial_state_sensitivity(&model, &traj).unwrap();
        assert_eq!(sens[0].state, DMatrix::identity(2, 2));
        let mut power = DMatrix::identity(2, 2);
        for s in &sens {
            assert_relative_eq!(s.state, power, max_relative = 1e-14);
            power = &a * power;
        }
    }

    #[test]
    fn single_sample_window_is_the_output_jacobian() {
        let model =
            LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]), DMatrix::zeros(2, 0), DMatrix::from_row_slice(1, 2, &[1.0, 2.0]))
                .unwrap();
        let traj = run_linear(&model, &[1.0, -1.0], &[], 5);
        let aug = augment(&model);
        let s = build_sensitivity_matrix(&aug, &traj, 3, 1).unwrap();
        assert_eq!(s.matrix, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn time_invariant_window_is_the_observability_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let model = LinearModel::new(a.clone(), DMatrix::zeros(2, 0), c.clone()).unwrap();
        let traj = run_linear(&model, &[1.0, -1.0], &[], 6);
        let aug = augment(&model);
        let s = build_sensitivity_matrix(&aug, &traj, 5, 3).unwrap();
        let expected = DMatrix::from_rows(&[c.row(0).into_owned(), (&c * &a).row(0).into_owned(), (&c * &a * &a).row(0).into_owned()]);
        assert_relative_eq!(s.matrix, expected, max_relative = 1e-14);
        let o = build_observability_matrix(&aug, &traj, 5, 3).unwrap();
        assert_eq!(o, s.matrix);
    }

    #[test]
    fn window_reaching_before_start_is_rejected() {
        let model = LinearModel::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 0), DMatrix::identity(1, 1)).unwrap();
        let traj = run_linear(&model, &[1.0], &[], 4);
        let aug = augment(&model);
        assert!(matches!(build_sensitivity_matrix(&aug, &traj, 2, 4), Err(Error::WindowOutOfRange { t: 2, window: 4 })));
    }

    #[test]
    fn canonical_observable_pair_is_full_rank() {
        // companion form, n = 4, y = first state
        let mut a = DMatrix::zeros(4, 4);
        for i in 0..3 {
            a[(i, i + 1)] = 1.0;
        }
        a.set_row(3, &nalgebra::RowDVector::from_row_slice(&[-0.1, 0.2, -0.3, 0.4]));
        let mut c = DMatrix::zeros(1, 4);
        c[(0, 0)] = 1.0;
        let model = LinearModel::new(a, DMatrix::zeros(4, 0), c).unwrap();
        let traj = run_linear(&model, &[1.0, 0.0, 0.0, 0.0], &[], 6);
        let o = build_observability_matrix(&augment(&model), &traj, 3, 4).unwrap();
        let report = rank_and_condition(&o, None).unwrap();
        assert_eq!(report.rank, 4);
        assert!(report.full_rank);
    }

    #[test]
    fn identity_rank_and_condition() {
        let r = rank_and_condition(&DMatrix::<f64>::identity(5, 5), None).unwrap();
        assert_eq!(r.rank, 5);
        assert_eq!(r.condition, 1.0);
        assert!(r.full_rank && r.well_conditioned);
    }

    #[test]
    fn duplicated_column_loses_rank() {
        let mut m = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i as f64) * (j as f64));
        let col = m.column(1).into_owned();
        m.set_column(3, &col);
        let r = rank_and_condition(&m, None).unwrap();
        assert!(r.rank <= 3);
        assert!(!r.full_rank);
    }

    #[test]
    fn normalization_scales_columns_and_rows() {
        let s = SensitivityMatrix {
            matrix: DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
            window: 2,
            anchor: 1,
            labels: vec!["a".into(), "b".into()],
        };
        let same = normalize_sensitivity(&s, &v(&[1.0, 1.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(same, s);
        let doubled = normalize_sensitivity(&s, &v(&[2.0, 1.0]), &v(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(doubled.matrix.column(0).norm(), 2.0 * s.matrix.column(0).norm());
        let rows = normalize_sensitivity(&s, &v(&[1.0, 1.0]), &v(&[1.0, 4.0])).unwrap();
        assert_eq!(rows.matrix[(1, 0)], 0.75);
        assert_eq!(rows.matrix[(3, 1)], 2.0);
        assert!(normalize_sensitivity(&s, &v(&[0.0, 1.0]), &v(&[1.0, 1.0])).is_err());
        assert!(normalize_sensitivity(&s, &v(&[1.0, 1.0]), &v(&[-1.0, 1.0])).is_err());
    }

    #[test]
    fn dims_of_window_follow_outputs() {
        let model = LinearModel::with_params(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(model.dims(), Dims { states: 2, inputs: 1, outputs: 2, params: 2 });
        let traj = run_linear(&model, &[1.0, 1.0], &[0.1, 0.2], 12);
        let s = build_sensitivity_matrix(&augment(&model), &traj, 11, 5).unwrap();
        assert_eq!(s.matrix.shape(), (10, 4));
        assert_eq!(s.labels, vec!["x_1", "x_2", "theta_1", "theta_2"]);
    }
}
