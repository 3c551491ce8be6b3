//! The eight mass and energy balances of the four vessels.

use dspe_core::model::{Dims, OutputJacobians, TransitionJacobians};
use dspe_core::{Error, Real, Result};
use nalgebra::{DMatrix, DVector};

use crate::params::{
    names, theta, Cstr4Params, INPUT_NAMES, N_INPUTS, N_OUTPUTS, N_PARAMS, N_STATES, OUTPUT_NAMES, PARAM_NAMES, STATE_NAMES, TEMPERATURES,
};
use crate::rk4::VectorField;

/// Where a stream entering a vessel comes from.
#[derive(Debug, Clone, Copy)]
enum Source {
    /// Fresh feed of vessel `i`: `C0i`, `T0i`.
    Feed(usize),
    Vessel(usize),
}

/// Stream flow as a signed sum of θ entries, and its source.
struct Stream {
    flow: &'static [(usize, f64)],
    from: Source,
}

const fn s(flow: &'static [(usize, f64)], from: Source) -> Stream {
    Stream { flow, from }
}

// Inflows of each vessel. The outflow enters every balance only through the
// `(C_src − C_i)` form, as written for the process.
const STREAMS: [&[Stream]; 4] = [
    &[s(&[(theta::F0[0], 1.0)], Source::Feed(0)), s(&[(theta::FR1, 1.0)], Source::Vessel(1)), s(&[(theta::FR2, 1.0)], Source::Vessel(3))],
    &[s(&[(theta::F[0], 1.0)], Source::Vessel(0)), s(&[(theta::F0[1], 1.0)], Source::Feed(1))],
    &[s(&[(theta::F[1], 1.0), (theta::FR1, -1.0)], Source::Vessel(1)), s(&[(theta::F0[2], 1.0)], Source::Feed(2))],
    &[s(&[(theta::F[2], 1.0)], Source::Vessel(2)), s(&[(theta::F0[3], 1.0)], Source::Feed(3))],
];

/// `dx/dt` of the four-vessel process; `x = [C1, T1, …, C4, T4]`, `u = Q1..Q4`,
/// `y = T1..T4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cstr4Field<T> {
    /// Known constants; the unknown entries are overwritten by θ on each call.
    pub params: Cstr4Params<T>,
}

impl<T: Real> Default for Cstr4Field<T> {
    fn default() -> Self {
        Cstr4Field { params: Cstr4Params::nominal() }
    }
}

struct Rates<T> {
    /// `k_j·exp(−E_j/(R·T))`
    r: [T; 3],
    /// `∂r_j/∂T`
    dr_dt: [T; 3],
    /// `∂r_j/∂E_j`
    dr_de: [T; 3],
    /// `∂r_j/∂R`
    dr_dr: [T; 3],
}

fn rates<T: Real>(p: &Cstr4Params<T>, temp: T) -> Result<Rates<T>> {
    if temp <= T::zero() || !temp.is_finite() {
        return Err(Error::Evaluation(format!("non-positive temperature {temp} K")));
    }
    let mut out = Rates { r: [T::zero(); 3], dr_dt: [T::zero(); 3], dr_de: [T::zero(); 3], dr_dr: [T::zero(); 3] };
    for j in 0..3 {
        let rj = p.k[j] * (-p.e[j] / (p.r * temp)).exp();
        out.r[j] = rj;
        out.dr_dt[j] = rj * p.e[j] / (p.r * temp * temp);
        out.dr_de[j] = -rj / (p.r * temp);
        out.dr_dr[j] = rj * p.e[j] / (p.r * p.r * temp);
    }
    Ok(out)
}

impl<T: Real> Cstr4Field<T> {
    fn resolve(&self, x: &DVector<T>, u: &DVector<T>, th: &DVector<T>) -> Result<Cstr4Params<T>> {
        if x.len() != N_STATES || u.len() != N_INPUTS {
            return Err(Error::Dimension(format!("CSTR4 takes 8 states and 4 inputs, got {} and {}", x.len(), u.len())));
        }
        let p = self.params.with_theta(th)?;
        p.validate()?;
        Ok(p)
    }

    fn flow(th: &DVector<T>, terms: &[(usize, f64)]) -> T {
        terms.iter().fold(T::zero(), |acc, &(k, sgn)| acc + th[k] * T::lit(sgn))
    }

    fn source(p: &Cstr4Params<T>, x: &DVector<T>, src: Source) -> (T, T) {
        match src {
            Source::Feed(i) => (p.c0[i], p.t0[i]),
            Source::Vessel(j) => (x[2 * j], x[2 * j + 1]),
        }
    }
}

/// Evaluates the balances at nominal-structure parameters `p`.
pub fn cstr4_rhs<T: Real>(x: &DVector<T>, u: &DVector<T>, p: &Cstr4Params<T>) -> Result<DVector<T>> {
    let field = Cstr4Field { params: *p };
    field.rhs(x, u, &p.theta())
}

impl<T: Real> VectorField<T> for Cstr4Field<T> {
    fn dims(&self) -> Dims {
        Dims { states: N_STATES, inputs: N_INPUTS, outputs: N_OUTPUTS, params: N_PARAMS }
    }

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, th: &DVector<T>) -> Result<DVector<T>> {
        let p = self.resolve(x, u, th)?;
        let rho_cp = p.rho * p.cp;
        let mut dx = DVector::zeros(N_STATES);
        for i in 0..4 {
            let (c, temp) = (x[2 * i], x[2 * i + 1]);
            let rt = rates(&p, temp)?;
            let mut dc = T::zero();
            let mut dtemp = T::zero();
            for st in STREAMS[i] {
                let q = Self::flow(th, st.flow) / p.v[i];
                let (cs, ts) = Self::source(&p, x, st.from);
                dc += q * (cs - c);
                dtemp += q * (ts - temp);
            }
            for j in 0..3 {
                dc -= rt.r[j] * c;
                dtemp -= p.dh[j] / rho_cp * rt.r[j] * c;
            }
            dtemp += u[i] / (rho_cp * p.v[i]);
            dx[2 * i] = dc;
            dx[2 * i + 1] = dtemp;
        }
        Ok(dx)
    }

    fn rhs_jacobians(&self, x: &DVector<T>, u: &DVector<T>, th: &DVector<T>) -> Result<TransitionJacobians<T>> {
        let p = self.resolve(x, u, th)?;
        let rho_cp = p.rho * p.cp;
        let mut fx = DMatrix::zeros(N_STATES, N_STATES);
        let mut fu = DMatrix::zeros(N_STATES, N_INPUTS);
        let mut fp = DMatrix::zeros(N_STATES, N_PARAMS);
        for i in 0..4 {
            let (ic, it) = (2 * i, 2 * i + 1);
            let (c, temp) = (x[ic], x[it]);
            let vi = p.v[i];
            let rt = rates(&p, temp)?;
            // Σ flow·(src − own), kept for ∂/∂V
            let mut mix_c = T::zero();
            let mut mix_t = T::zero();
            for st in STREAMS[i] {
                let flow = Self::flow(th, st.flow);
                let q = flow / vi;
                let (cs, ts) = Self::source(&p, x, st.from);
                mix_c += flow * (cs - c);
                mix_t += flow * (ts - temp);
                fx[(ic, ic)] -= q;
                fx[(it, it)] -= q;
                match st.from {
                    Source::Vessel(j) => {
                        fx[(ic, 2 * j)] += q;
                        fx[(it, 2 * j + 1)] += q;
                    }
                    Source::Feed(f) => fp[(ic, theta::C0[f])] += q,
                }
                for &(k, sgn) in st.flow {
                    fp[(ic, k)] += T::lit(sgn) * (cs - c) / vi;
                    fp[(it, k)] += T::lit(sgn) * (ts - temp) / vi;
                }
            }
            for j in 0..3 {
                let heat = -p.dh[j] / rho_cp;
                fx[(ic, ic)] -= rt.r[j];
                fx[(ic, it)] -= rt.dr_dt[j] * c;
                fx[(it, ic)] += heat * rt.r[j];
                fx[(it, it)] += heat * rt.dr_dt[j] * c;
                fp[(ic, theta::E[j])] -= rt.dr_de[j] * c;
                fp[(it, theta::E[j])] += heat * rt.dr_de[j] * c;
                fp[(ic, theta::R)] -= rt.dr_dr[j] * c;
                fp[(it, theta::R)] += heat * rt.dr_dr[j] * c;
            }
            fu[(it, i)] = T::one() / (rho_cp * vi);
            fp[(ic, theta::V[i])] = -mix_c / (vi * vi);
            fp[(it, theta::V[i])] = -mix_t / (vi * vi) - u[i] / (rho_cp * vi * vi);
        }
        Ok(TransitionJacobians { fx, fu, ftheta: fp })
    }

    fn output(&self, x: &DVector<T>, _th: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != N_STATES {
            return Err(Error::Dimension(format!("CSTR4 takes 8 states, got {}", x.len())));
        }
        Ok(DVector::from_fn(N_OUTPUTS, |k, _| x[TEMPERATURES[k]]))
    }

    fn output_jacobians(&self, _x: &DVector<T>, _th: &DVector<T>) -> Result<OutputJacobians<T>> {
        let mut hx = DMatrix::zeros(N_OUTPUTS, N_STATES);
        for (k, &i) in TEMPERATURES.iter().enumerate() {
            hx[(k, i)] = T::one();
        }
        Ok(OutputJacobians { hx, htheta: DMatrix::zeros(N_OUTPUTS, N_PARAMS) })
    }

    fn state_names(&self) -> Vec<String> {
        names(&STATE_NAMES)
    }

    fn input_names(&self) -> Vec<String> {
        names(&INPUT_NAMES)
    }

    fn output_names(&self) -> Vec<String> {
        names(&OUTPUT_NAMES)
    }

    fn param_names(&self) -> Vec<String> {
        names(&PARAM_NAMES)
    }
}
