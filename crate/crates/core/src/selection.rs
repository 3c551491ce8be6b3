//! Estimable-subset selection by greedy orthogonalization of the normalized
//! sensitivity matrix.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::fmt_num;
use crate::scalar::Real;

/// `α = 3·sqrt(w̄² + v̄²)`
pub fn cutoff_value<T: Real>(w_bar: T, v_bar: T) -> Result<T> {
    if !(w_bar >= T::zero() && v_bar >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise levels must be non-negative, got {w_bar} and {v_bar}")));
    }
    Ok(T::lit(3.0) * (w_bar * w_bar + v_bar * v_bar).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<T: Real> {
    /// Forced columns first, in the order given, then greedy picks.
    pub selected: Vec<usize>,
    /// Largest residual norm at each greedy iteration, one per greedy pick.
    pub residual_norms: Vec<T>,
    /// Largest residual norm when the loop stopped, if any column was left.
    pub stop_norm: Option<T>,
    pub alpha: T,
    pub forced: Vec<usize>,
    /// Complement of `selected`, ascending.
    pub unselected: Vec<usize>,
    pub columns: usize,
}

impl<T: Real> SelectionResult<T> {
    pub fn is_selected(&self, j: usize) -> bool {
        self.selected.contains(&j)
    }

    /// Mask over all columns.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.columns];
        for &j in &self.selected {
            m[j] = true;
        }
        m
    }

    /// Greedy picks only.
    pub fn greedy(&self) -> &[usize] {
        &self.selected[self.forced.len()..]
    }

    pub fn to_json(&self, labels: Option<&[String]>) -> Value {
        let name = |j: &usize| labels.and_then(|l| l.get(*j)).cloned().unwrap_or_else(|| j.to_string());
        json!({
            "selected": self.selected,
            "selected_names": self.selected.iter().map(name).collect::<Vec<_>>(),
            "residual_norms": self.residual_norms.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            "stop_norm": self.stop_norm.map(|v| v.as_f64()),
            "alpha": self.alpha.as_f64(),
            "forced": self.forced,
            "unselected": self.unselected,
        })
    }
}

fn residual<T: Real>(col: &DVector<T>, basis: &[DVector<T>]) -> DVector<T> {
    // Gram-Schmidt applied twice keeps the residual orthogonal to working precision.
    let mut r = col.clone();
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(&r);
            r.axpy(-c, q, T::one());
        }
    }
    r
}

/// Relative size under which a residual counts as already spanned.
fn dependence_tol<T: Real>(s: &DMatrix<T>) -> T {
    let scale = s.column_iter().map(|c| c.norm()).fold(T::zero(), |a, b| a.max(b));
    scale * T::lit(s.nrows().max(s.ncols()) as f64) * T::default_epsilon() * T::lit(1e2)
}

/// Greedy orthogonalization.
///
/// Forced columns seed the basis. Each iteration projects every remaining column
/// onto the orthogonal complement of the basis and takes the one with the largest
/// residual norm (lowest index on ties); the loop stops once that norm is ≤ `α`.
pub fn orthogonalize_select<T: Real>(s: &DMatrix<T>, alpha: T, forced: &[usize]) -> Result<SelectionResult<T>> {
    let n = s.ncols();
    if alpha.partial_cmp(&T::zero()).is_none_or(|o| o.is_lt()) {
        return Err(Error::InvalidArgument(format!("cutoff must be non-negative, got {alpha}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sensitivity matrix has non-finite entries".into()));
    }
    let mut taken = vec![false; n];
    for &j in forced {
        if j >= n {
            return Err(Error::InvalidArgument(format!("forced column {j} out of range for {n} columns")));
        }
        if taken[j] {
            return Err(Error::InvalidArgument(format!("column {j} forced twice")));
        }
        taken[j] = true;
    }
    let tol = dependence_tol(s);
    let mut basis: Vec<DVector<T>> = Vec::new();
    let push = |basis: &mut Vec<DVector<T>>, r: DVector<T>| {
        let norm = r.norm();
        if norm > tol {
            basis.push(r / norm);
        }
    };
    for &j in forced {
        let r = residual(&s.column(j).into_owned(), &basis);
        push(&mut basis, r);
    }

    let mut selected = forced.to_vec();
    let mut residual_norms = Vec::new();
    let mut stop_norm = None;
    loop {
        let mut best: Option<(usize, T, DVector<T>)> = None;
        for j in (0..n).filter(|&j| !taken[j]) {
            let r = residual(&s.column(j).into_owned(), &basis);
            let norm = r.norm();
            if best.as_ref().is_none_or(|(_, b, _)| norm > *b) {
                best = Some((j, norm, r));
            }
        }
        let Some((j, norm, r)) = best else { break };
        if norm <= alpha {
            stop_norm = Some(norm);
            break;
        }
        taken[j] = true;
        selected.push(j);
        residual_norms.push(norm);
        push(&mut basis, r);
        #[cfg(debug_assertions)]
        debug_check_basis(&basis);
    }

    let unselected = (0..n).filter(|j| !taken[*j]).collect();
    Ok(SelectionResult { selected, residual_norms, stop_norm, alpha, forced: forced.to_vec(), unselected, columns: n })
}

#[cfg(debug_assertions)]
fn debug_check_basis<T: Real>(basis: &[DVector<T>]) {
    // An orthonormal basis makes P = I − QQᵀ an idempotent projector with P·X = 0.
    let tol = T::lit(1e-10).max(T::default_epsilon().sqrt() * T::lit(10.0));
    if let Some((last, rest)) = basis.split_last() {
        debug_assert!((last.norm() - T::one()).abs() <= tol);
        for q in rest {
            debug_assert!(q.dot(last).abs() <= tol);
        }
    }
}

/// Per-variable selection counts over sampling times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTally {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl SelectionTally {
    /// CSV `variable,count` with rows in `order` (all columns when `None`).
    pub fn write_csv<W: Write>(&self, mut w: W, labels: &[String], order: Option<&[usize]>) -> Result<()> {
        if labels.len() != self.counts.len() {
            return Err(Error::Dimension(format!("{} labels for {} variables", labels.len(), self.counts.len())));
        }
        writeln!(w, "variable,count")?;
        let all: Vec<usize> = (0..self.counts.len()).collect();
        for &j in order.unwrap_or(&all) {
            let c = self.counts.get(j).ok_or_else(|| Error::InvalidArgument(format!("no variable {j}")))?;
            writeln!(w, "{},{}", labels[j], c)?;
        }
        Ok(())
    }

    pub fn fraction(&self, j: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[j] as f64 / self.total as f64
        }
    }
}

pub fn tally_selection<T: Real>(results: &[SelectionResult<T>]) -> Result<SelectionTally> {
    let first = results.first().ok_or_else(|| Error::InvalidArgument("no selection results to tally".into()))?;
    let mut counts = vec![0; first.columns];
    for r in results {
        if r.columns != first.columns {
            return Err(Error::Dimension(format!("selection over {} columns mixed with {}", r.columns, first.columns)));
        }
        for &j in &r.selected {
            counts[j] += 1;
        }
    }
    Ok(SelectionTally { counts, total: results.len() })
}

/// One JSON object per step, as an array.
pub fn selections_to_json<T: Real>(results: &[SelectionResult<T>], labels: Option<&[String]>) -> Value {
    Value::Array(results.iter().map(|r| r.to_json(labels)).collect())
}

/// `step,selected` CSV with space-separated indices.
pub fn write_selection_csv<W: Write, T: Real>(mut w: W, results: &[SelectionResult<T>]) -> Result<()> {
    writeln!(w, "step,selected,alpha")?;
    for (t, r) in results.iter().enumerate() {
        let idx: Vec<String> = r.selected.iter().map(|j| j.to_string()).collect();
        writeln!(w, "{t},{},{}", idx.join(" "), fmt_num(r.alpha.as_f64()))?;
    }
    Ok(())
}
