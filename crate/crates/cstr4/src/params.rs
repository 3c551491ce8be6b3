//! Process constants and the 21 unknown parameters.

use dspe_core::{Error, Real, Result};
use nalgebra::DVector;

pub const N_STATES: usize = 8;
pub const N_INPUTS: usize = 4;
pub const N_OUTPUTS: usize = 4;
pub const N_PARAMS: usize = 21;
pub const N_AUGMENTED: usize = N_STATES + N_PARAMS;

/// Sample time, hours.
pub const SAMPLE_TIME: f64 = 1.0 / 120.0;

/// Heat inputs `Q1..Q4`, kJ/h.
pub const NOMINAL_HEAT: [f64; 4] = [1.0e4, 2.0e4, 2.5e4, 1.0e4];

pub const STATE_NAMES: [&str; N_STATES] = ["CA1", "T1", "CA2", "T2", "CA3", "T3", "CA4", "T4"];
pub const INPUT_NAMES: [&str; N_INPUTS] = ["Q1", "Q2", "Q3", "Q4"];
pub const OUTPUT_NAMES: [&str; N_OUTPUTS] = ["y_T1", "y_T2", "y_T3", "y_T4"];
pub const PARAM_NAMES: [&str; N_PARAMS] =
    ["F01", "F02", "F03", "F04", "V1", "V2", "V3", "V4", "C01", "C02", "C03", "C04", "E1", "E2", "E3", "F1", "F2", "F3", "Fr1", "Fr2", "R"];

/// Positions in θ.
pub mod theta {
    pub const F0: [usize; 4] = [0, 1, 2, 3];
    pub const V: [usize; 4] = [4, 5, 6, 7];
    pub const C0: [usize; 4] = [8, 9, 10, 11];
    pub const E: [usize; 3] = [12, 13, 14];
    pub const F: [usize; 3] = [15, 16, 17];
    pub const FR1: usize = 18;
    pub const FR2: usize = 19;
    pub const R: usize = 20;
}

/// Temperature states `T1..T4`, which are also the measured outputs.
pub const TEMPERATURES: [usize; 4] = [1, 3, 5, 7];

/// Every process quantity; the unknown ones are mirrored in [`Cstr4Params::theta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cstr4Params<T> {
    /// Feed flows `F01..F04`, m³/h.
    pub f0: [T; 4],
    /// Holdups `V1..V4`, m³.
    pub v: [T; 4],
    /// Feed concentrations `C01..C04`, kmol/m³.
    pub c0: [T; 4],
    /// Activation energies, kJ/kmol.
    pub e: [T; 3],
    /// Effluent flows `F1..F3`, m³/h.
    pub f: [T; 3],
    pub fr1: T,
    pub fr2: T,
    /// Gas constant, kJ/(kmol·K).
    pub r: T,
    /// Feed temperatures, K.
    pub t0: [T; 4],
    /// Reaction enthalpies, kJ/kmol.
    pub dh: [T; 3],
    /// Pre-exponential factors, 1/h.
    pub k: [T; 3],
    /// kJ/(kg·K)
    pub cp: T,
    /// kg/m³
    pub rho: T,
}

fn arr<T: Real, const N: usize>(v: [f64; N]) -> [T; N] {
    v.map(T::lit)
}

impl<T: Real> Cstr4Params<T> {
    pub fn nominal() -> Self {
        Cstr4Params {
            f0: arr([5.0, 10.0, 8.0, 12.0]),
            v: arr([1.0, 3.0, 4.0, 6.0]),
            c0: arr([4.0, 2.0, 3.0, 3.5]),
            e: arr([5.0e4, 7.5e4, 7.53e4]),
            f: arr([35.0, 45.0, 33.0]),
            fr1: T::lit(20.0),
            fr2: T::lit(10.0),
            r: T::lit(8.314),
            t0: arr([300.0; 4]),
            dh: arr([-5.0e4, -5.2e4, -5.0e4]),
            k: arr([3.0e6, 3.0e5, 3.0e5]),
            cp: T::lit(0.231),
            rho: T::lit(1000.0),
        }
    }

    pub fn theta(&self) -> DVector<T> {
        let mut t = DVector::zeros(N_PARAMS);
        for i in 0..4 {
            t[theta::F0[i]] = self.f0[i];
            t[theta::V[i]] = self.v[i];
            t[theta::C0[i]] = self.c0[i];
        }
        for i in 0..3 {
            t[theta::E[i]] = self.e[i];
            t[theta::F[i]] = self.f[i];
        }
        t[theta::FR1] = self.fr1;
        t[theta::FR2] = self.fr2;
        t[theta::R] = self.r;
        t
    }

    /// Copy with the unknown parameters replaced by `θ`.
    pub fn with_theta(&self, th: &DVector<T>) -> Result<Self> {
        if th.len() != N_PARAMS {
            return Err(Error::Dimension(format!("θ has length {}, expected {N_PARAMS}", th.len())));
        }
        let mut p = *self;
        for i in 0..4 {
            p.f0[i] = th[theta::F0[i]];
            p.v[i] = th[theta::V[i]];
            p.c0[i] = th[theta::C0[i]];
        }
        for i in 0..3 {
            p.e[i] = th[theta::E[i]];
            p.f[i] = th[theta::F[i]];
        }
        p.fr1 = th[theta::FR1];
        p.fr2 = th[theta::FR2];
        p.r = th[theta::R];
        Ok(p)
    }

    /// Volumes, flows, `c_p`, `ρ` and `R` must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        let positive =
            self.v.iter().chain(&self.f0).chain(&self.f).chain([&self.fr1, &self.fr2, &self.cp, &self.rho, &self.r]).all(|v| *v > T::zero());
        if !positive {
            return Err(Error::InvalidArgument("volumes, flows, heat capacity, density and gas constant must be positive".into()));
        }
        Ok(())
    }
}

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// State then parameter names.
pub fn augmented_names() -> Vec<String> {
    STATE_NAMES.iter().chain(&PARAM_NAMES).map(|s| s.to_string()).collect()
}

/// Augmented index of a state or parameter name.
pub fn augmented_index(name: &str) -> Option<usize> {
    augmented_names().iter().position(|n| n == name)
}
