//! The four estimation cases: subsystem groupings, weights, bounds, initial
//! mismatch and noise.

use dspe_core::graph::SubsystemSpec;
use dspe_core::mhe::{Bounds, MheConfig, SubsystemEstimator};
use dspe_core::model::NoiseSpec;
use dspe_core::selection::cutoff_value;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Cstr4Field;
use crate::model::{augmented_scales, nominal_heat, nominal_theta, output_scales};
use crate::params::{augmented_index, N_AUGMENTED, N_STATES, PARAM_NAMES, STATE_NAMES};
use crate::rk4::VectorField;
use crate::steady::steady_state;

/// MHE horizon and sensitivity window length.
pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_STEPS: usize = 500;

/// Subsystem groupings of the four cases, by variable name.
pub fn published_groups(case: u8) -> Option<Vec<Vec<&'static str>>> {
    let all: Vec<&str> = STATE_NAMES.iter().chain(&PARAM_NAMES).copied().collect();
    Some(match case {
        1 => vec![all],
        2 => vec![vec!["CA1", "T1", "CA2", "T2", "F01", "F02", "V1", "V2", "Fr2"], vec!["CA3", "T3", "F03", "V3"], vec!["CA4", "T4", "F04", "V4"]],
        3 => vec![
            vec!["CA1", "T1", "F01", "V1", "Fr2"],
            vec!["CA2", "T2", "F02", "V2"],
            vec!["CA3", "T3", "F03", "V3"],
            vec!["CA4", "T4", "F04", "V4"],
        ],
        4 => vec![
            vec!["CA1", "T1", "CA2", "T2", "F01", "F02", "V1", "V2", "C01", "C02", "F1", "Fr1", "Fr2", "R", "E1"],
            vec!["CA3", "T3", "F03", "V3", "C03", "F2", "E2"],
            vec!["CA4", "T4", "F04", "V4", "C04", "F3", "E3"],
        ],
        _ => return None,
    })
}

/// Standard deviations in normalized units; each covariance is their square
/// times the squared scale of the entry it weighs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub process: f64,
    pub measurement: f64,
    pub arrival_state: f64,
    pub arrival_param: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning { process: 0.05, measurement: 0.05, arrival_state: 0.1, arrival_param: 0.07 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: u8,
    /// Estimated variables of each subsystem, by name.
    pub groups: Vec<Vec<String>>,
    /// Freeze the variables not selected at each instant.
    pub selection: bool,
    pub horizon: usize,
    /// Sensitivity window length.
    pub window: usize,
    pub steps: usize,
    pub seed: u64,
    /// Relative offset of the initial guess from the truth.
    pub mismatch: f64,
    /// Normalized process-noise standard deviation `w̄`.
    pub process_noise: f64,
    /// Normalized measurement-noise standard deviation `v̄`.
    pub measurement_noise: f64,
    pub tuning: Tuning,
}

impl CaseConfig {
    /// The published setup of case 1 to 4.
    pub fn published(case: u8, seed: u64) -> Result<Self> {
        let groups = published_groups(case).ok_or_else(|| Error::InvalidCase(format!("case {case} is not one of 1, 2, 3, 4")))?;
        let cfg = CaseConfig {
            case,
            groups: groups.into_iter().map(|g| g.into_iter().map(String::from).collect()).collect(),
            selection: case != 4,
            horizon: DEFAULT_HORIZON,
            window: DEFAULT_HORIZON,
            steps: DEFAULT_STEPS,
            seed,
            mismatch: 0.05,
            process_noise: 1e-3,
            measurement_noise: 1e-3,
            tuning: Tuning::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCase(m));
        if self.horizon == 0 || self.window == 0 || self.steps == 0 {
            return bad("horizon, window and steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mismatch) {
            return bad(format!("mismatch {} outside [0, 1)", self.mismatch));
        }
        let t = &self.tuning;
        let noise_ok = [self.process_noise, self.measurement_noise].iter().all(|v| v.is_finite() && *v >= 0.0);
        let tuning_ok = [t.process, t.measurement, t.arrival_state, t.arrival_param].iter().all(|v| v.is_finite() && *v > 0.0);
        if !noise_ok || !tuning_ok {
            return bad("noise levels must be non-negative and tuning deviations positive".into());
        }
        if self.groups.is_empty() {
            return bad("no subsystems".into());
        }
        let mut seen = [false; N_AUGMENTED];
        for g in &self.groups {
            for name in g {
                let Some(j) = augmented_index(name) else {
                    return bad(format!("unknown variable `{name}`"));
                };
                if std::mem::replace(&mut seen[j], true) {
                    return bad(format!("`{name}` belongs to two subsystems"));
                }
            }
            if !g.iter().any(|n| augmented_index(n).is_some_and(|j| j < N_STATES)) {
                return bad(format!("subsystem {{{}}} holds no state", g.join(", ")));
            }
        }
        if let Some(i) = (0..N_STATES).find(|&i| !seen[i]) {
            return bad(format!("state {} is in no subsystem", STATE_NAMES[i]));
        }
        Ok(())
    }

    /// Eq. 20 cutoff from the normalized noise levels.
    pub fn alpha(&self) -> Result<f64> {
        Ok(cutoff_value(self.process_noise, self.measurement_noise)?)
    }

    /// Local index sets; outputs and inputs follow the vessels of the local states.
    pub fn specs(&self) -> Result<Vec<SubsystemSpec>> {
        self.validate()?;
        let mut specs: Vec<SubsystemSpec> = self
            .groups
            .iter()
            .enumerate()
            .map(|(id, g)| {
                let mut idx: Vec<usize> = g.iter().filter_map(|n| augmented_index(n)).collect();
                idx.sort_unstable();
                let states: Vec<usize> = idx.iter().copied().filter(|&j| j < N_STATES).collect();
                let mut vessels: Vec<usize> = states.iter().map(|i| i / 2).collect();
                vessels.dedup();
                SubsystemSpec {
                    id,
                    params: idx.iter().filter(|&&j| j >= N_STATES).map(|j| j - N_STATES).collect(),
                    outputs: vessels.clone(),
                    inputs: vessels,
                    states,
                    interactions: Vec::new(),
                    neighbors: Vec::new(),
                }
            })
            .collect();
        // interaction pattern of the vector field at the operating point
        let field = Cstr4Field::<f64>::default();
        let fx = field.rhs_jacobians(&steady_state(), &nominal_heat(), &nominal_theta())?.fx;
        let owner: Vec<usize> = (0..N_STATES).map(|i| specs.iter().position(|s| s.states.contains(&i)).unwrap_or(0)).collect();
        for s in specs.iter_mut() {
            for j in 0..N_STATES {
                if owner[j] != s.id && s.states.iter().any(|&i| fx[(i, j)] != 0.0) {
                    s.interactions.push(j);
                    if !s.neighbors.contains(&owner[j]) {
                        s.neighbors.push(owner[j]);
                    }
                }
            }
            s.neighbors.sort_unstable();
        }
        Ok(specs)
    }

    /// Covariances of one subsystem in model units.
    pub fn mhe_config(&self, spec: &SubsystemSpec) -> Result<MheConfig<f64>> {
        let zs = augmented_scales::<f64>();
        let ys = output_scales::<f64>();
        let t = &self.tuning;
        let sq = |v: f64| v * v;
        let q = DMatrix::from_diagonal(&DVector::from_iterator(spec.states.len(), spec.states.iter().map(|&i| sq(t.process * zs[i]))));
        let r = DMatrix::from_diagonal(&DVector::from_iterator(spec.outputs.len(), spec.outputs.iter().map(|&k| sq(t.measurement * ys[k]))));
        let local = spec.augmented(N_STATES);
        let p = DMatrix::from_diagonal(&DVector::from_iterator(
            local.len(),
            local.iter().map(|&j| sq(if j < N_STATES { t.arrival_state } else { t.arrival_param } * zs[j])),
        ));
        let b = bounds();
        Ok(MheConfig::new(self.horizon, q, r, p)?.with_bounds(b.select(&local))?)
    }

    pub fn estimators(&self) -> Result<Vec<SubsystemEstimator<f64>>> {
        self.specs()?.into_iter().map(|spec| Ok(SubsystemEstimator { config: self.mhe_config(&spec)?, spec })).collect()
    }

    /// Truth offset by `±mismatch`, `+` on even and `−` on odd augmented indices.
    pub fn initial_guess(&self) -> DVector<f64> {
        mismatched(&true_initial_augmented(), self.mismatch)
    }

    /// Absolute standard deviations: `w̄·x_s` per state, `v̄·T_s` per output.
    pub fn noise(&self) -> Result<NoiseSpec> {
        let zs = augmented_scales::<f64>();
        let ys = output_scales::<f64>();
        Ok(NoiseSpec::new(
            (0..N_STATES).map(|i| self.process_noise * zs[i]).collect(),
            ys.iter().map(|y| self.measurement_noise * y).collect(),
            self.seed,
        )?)
    }
}

/// `[x_s; θ_nominal]`, where the truth starts.
pub fn true_initial_augmented() -> DVector<f64> {
    augmented_scales()
}

pub fn mismatched(z: &DVector<f64>, fraction: f64) -> DVector<f64> {
    DVector::from_fn(z.len(), |j, _| z[j] * if j % 2 == 0 { 1.0 + fraction } else { 1.0 - fraction })
}

/// Concentrations non-negative, temperatures in `[250, 500]` K, parameters
/// within ±50 % of nominal.
pub fn bounds() -> Bounds<f64> {
    let zs = augmented_scales::<f64>();
    let mut lo = DVector::zeros(N_AUGMENTED);
    let mut hi = DVector::zeros(N_AUGMENTED);
    for j in 0..N_AUGMENTED {
        (lo[j], hi[j]) = match j {
            j if j < N_STATES && j % 2 == 0 => (0.0, f64::INFINITY),
            j if j < N_STATES => (250.0, 500.0),
            _ => (0.5 * zs[j], 1.5 * zs[j]),
        };
    }
    Bounds { lower: lo, upper: hi }
}
