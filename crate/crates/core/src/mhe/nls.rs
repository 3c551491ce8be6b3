//! Box-constrained nonlinear least squares: projected, damped Gauss-Newton
//! (Levenberg-Marquardt) with an active set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Projected-gradient infinity norm, relative to `1 + ‖r‖`.
    pub gradient_tol: f64,
    /// Step length, relative to `1 + ‖x‖`.
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { gradient_tol: 1e-8, step_tol: 1e-10, max_iterations: 200 }
    }
}

/// Stacked residual `r(x)` with Jacobian.
pub trait ResidualMap<T: Real> {
    fn residual(&self, x: &DVector<T>) -> Result<DVector<T>>;

    fn residual_and_jacobian(&self, x: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)>;
}

/// Closure pair as a [`ResidualMap`].
pub struct FnResidual<F, G> {
    pub residual: F,
    pub jacobian: G,
}

impl<T, F, G> ResidualMap<T> for FnResidual<F, G>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
    G: Fn(&DVector<T>) -> Result<DMatrix<T>>,
{
    fn residual(&self, x: &DVector<T>) -> Result<DVector<T>> {
        (self.residual)(x)
    }

    fn residual_and_jacobian(&self, x: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        Ok(((self.residual)(x)?, (self.jacobian)(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsSolution<T: Real> {
    pub x: DVector<T>,
    /// `‖r(x)‖²`
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iterate, starting with the initial point.
    pub history: Vec<T>,
}

/// Box `[lower, upper]`; infinite entries leave a side open.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T: Real> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> Bounds<T> {
    pub fn unbounded(n: usize) -> Self {
        let inf = T::lit(f64::INFINITY);
        Bounds { lower: DVector::from_element(n, -inf), upper: DVector::from_element(n, inf) }
    }

    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let b = Bounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Dimension("bound vectors differ in length".into()));
        }
        for (i, (l, u)) in self.lower.iter().zip(self.upper.iter()).enumerate() {
            // also rejects NaN
            if l.partial_cmp(u).is_none_or(|o| o.is_gt()) {
                return Err(Error::InfeasibleBounds(format!("entry {i}: [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v.max(self.lower[i]).min(self.upper[i])))
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Bounds { lower: self.lower.select_rows(idx), upper: self.upper.select_rows(idx) }
    }
}

/// Solves `min ‖r(x)‖²` on a box, with `frozen` entries held at their start value.
pub fn nls_solve<T: Real, R: ResidualMap<T> + ?Sized>(
    map: &R,
    x0: &DVector<T>,
    bounds: Option<&Bounds<T>>,
    frozen: &[usize],
    opts: &SolverOptions,
) -> Result<NlsSolution<T>> {
    let n = x0.len();
    let bounds = match bounds {
        Some(b) => {
            if b.len() != n {
                return Err(Error::Dimension(format!("{} bounds for {n} variables", b.len())));
            }
            b.validate()?;
            b.clone()
        }
        None => Bounds::unbounded(n),
    };
    let mut is_frozen = vec![false; n];
    for &i in frozen {
        if i >= n {
            return Err(Error::InvalidArgument(format!("frozen index {i} outside {n} variables")));
        }
        is_frozen[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|i| !is_frozen[*i]).collect();

    // frozen entries keep their value even outside the box
    let project = |x: &DVector<T>| {
        let mut p = bounds.clamp(x);
        for &i in frozen {
            p[i] = x[i];
        }
        p
    };
    let mut x = project(x0);
    let (mut r, mut jac) = map.residual_and_jacobian(&x)?;
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Evaluation("objective is not finite at the starting point".into()));
    }
    let mut history = vec![cost];
    let mut mu = T::lit(1e-3);
    let gtol = T::lit(opts.gradient_tol);
    let stol = T::lit(opts.step_tol);
    let mut iterations = 0;
    let mut converged = free.is_empty();

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let g = jac.transpose() * &r;
        let mut pg = T::zero();
        let mut active = Vec::new();
        let mut inactive = Vec::new();
        for &i in &free {
            let moved = (x[i] - g[i]).max(bounds.lower[i]).min(bounds.upper[i]);
            pg = pg.max((x[i] - moved).abs());
            let at_lower = x[i] <= bounds.lower[i] && g[i] > T::zero();
            let at_upper = x[i] >= bounds.upper[i] && g[i] < T::zero();
            if at_lower || at_upper {
                active.push(i);
            } else {
                inactive.push(i);
            }
        }
        if inactive.is_empty() {
            converged = true;
            break;
        }
        let ji = jac.select_columns(&inactive);
        if pg <= gtol * (T::one() + cost.sqrt()) {
            // undamped Gauss-Newton polish, kept only if it does not raise the cost
            if let Some(step) = least_squares(ji.clone(), -&r) {
                let mut trial = x.clone();
                for (j, &i) in inactive.iter().enumerate() {
                    trial[i] += step[j];
                }
                let trial = project(&trial);
                if let Ok(nr) = map.residual(&trial) {
                    let c = nr.norm_squared();
                    if c.is_finite() && c <= cost {
                        x = trial;
                        cost = c;
                        history.push(cost);
                    }
                }
            }
            converged = true;
            break;
        }

        let scale: Vec<T> = ji.column_iter().map(|c| c.norm().max(T::lit(1e-8))).collect();
        let m = ji.nrows();
        let k = inactive.len();
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = DMatrix::zeros(m + k, k);
            a.view_mut((0, 0), (m, k)).copy_from(&ji);
            let sm = mu.sqrt();
            for j in 0..k {
                a[(m + j, j)] = sm * scale[j];
            }
            let mut b = DVector::zeros(m + k);
            b.rows_mut(0, m).copy_from(&(-&r));
            let Some(step) = least_squares(a, b) else {
                mu *= T::lit(4.0);
                continue;
            };
            let mut trial = x.clone();
            for (j, &i) in inactive.iter().enumerate() {
                trial[i] += step[j];
            }
            let trial = project(&trial);
            let dx = (&trial - &x).norm();
            if dx <= stol * (T::one() + x.norm()) {
                converged = true;
                break;
            }
            let new_cost = match map.residual(&trial) {
                Ok(rt) => rt.norm_squared(),
                Err(_) => T::lit(f64::INFINITY),
            };
            if new_cost.is_finite() && new_cost < cost {
                x = trial;
                let (nr, nj) = map.residual_and_jacobian(&x)?;
                r = nr;
                jac = nj;
                debug_assert!(r.norm_squared() <= cost);
                cost = r.norm_squared();
                history.push(cost);
                mu = (mu / T::lit(3.0)).max(T::lit(1e-12));
                accepted = true;
                break;
            }
            mu *= T::lit(4.0);
            if mu > T::lit(1e16) {
                break;
            }
        }
        if !accepted {
            // no descent left along any damped direction
            converged = converged || pg <= gtol.sqrt() * (T::one() + cost.sqrt());
            break;
        }
    }
    Ok(NlsSolution { x, objective: cost, iterations, converged, history })
}

/// Least-squares solution of a tall full-column-rank system via QR.
fn least_squares<T: Real>(a: DMatrix<T>, b: DVector<T>) -> Option<DVector<T>> {
    let n = a.ncols();
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    r.solve_upper_triangular(&qtb.rows(0, n).into_owned()).filter(|s| s.iter().all(|v| v.is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear(a: DMatrix<f64>, b: DVector<f64>) -> impl ResidualMap<f64> {
        let a2 = a.clone();
        FnResidual { residual: move |x: &DVector<f64>| Ok(&a * x - &b), jacobian: move |_: &DVector<f64>| Ok(a2.clone()) }
    }

    #[test]
    fn linear_least_squares_matches_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 2.0, 4.0]);
        let ata = a.transpose() * &a;
        let expected = ata.try_inverse().unwrap() * a.transpose() * &b;
        let sol = nls_solve(&linear(a, b), &DVector::zeros(2), None, &[], &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.x, expected, epsilon = 1e-10);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock_from_the_classic_start() {
        let map = FnResidual {
            residual: |x: &DVector<f64>| Ok(DVector::from_column_slice(&[10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])),
            jacobian: |x: &DVector<f64>| Ok(DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])),
        };
        let sol = nls_solve(&map, &DVector::from_column_slice(&[-1.2, 1.0]), None, &[], &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.x, DVector::from_column_slice(&[1.0, 1.0]), epsilon = 1e-6);
    }

    #[test]
    fn active_upper_bound() {
        let map = linear(DMatrix::identity(1, 1), DVector::from_element(1, 2.0));
        let b = Bounds::new(DVector::from_element(1, -10.0), DVector::from_element(1, 1.0)).unwrap();
        let sol = nls_solve(&map, &DVector::zeros(1), Some(&b), &[], &SolverOptions::default()).unwrap();
        assert_eq!(sol.x[0], 1.0);
        assert!(sol.converged);
    }

    #[test]
    fn frozen_entries_do_not_move() {
        let map = linear(DMatrix::identity(2, 2), DVector::from_column_slice(&[2.0, 3.0]));
        let sol = nls_solve(&map, &DVector::from_column_slice(&[0.5, 0.0]), None, &[0], &SolverOptions::default()).unwrap();
        assert_eq!(sol.x[0], 0.5);
        assert_relative_eq!(sol.x[1], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let map = linear(DMatrix::identity(1, 1), DVector::zeros(1));
        let b = Bounds { lower: DVector::from_element(1, 1.0), upper: DVector::from_element(1, 0.0) };
        assert!(matches!(nls_solve(&map, &DVector::zeros(1), Some(&b), &[], &SolverOptions::default()), Err(Error::InfeasibleBounds(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let map = FnResidual {
            residual: |x: &DVector<f64>| Ok(DVector::from_column_slice(&[10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])),
            jacobian: |x: &DVector<f64>| Ok(DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])),
        };
        let opts = SolverOptions { max_iterations: 1, ..Default::default() };
        let sol = nls_solve(&map, &DVector::from_column_slice(&[-1.2, 1.0]), None, &[], &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }
}
