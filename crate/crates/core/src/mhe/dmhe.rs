//! Distributed MHE: one local estimator per subsystem, estimates exchanged with
//! a one-step delay.

use nalgebra::DVector;
use rayon::prelude::*;

use super::{solve_local_mhe, MheConfig, MheProblem, MheResult};
use crate::error::{Error, Result};
use crate::graph::SubsystemSpec;
use crate::model::{check_len, Dims, NonlinearModel};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemEstimator<T: Real> {
    pub spec: SubsystemSpec,
    pub config: MheConfig<T>,
}

/// Record of one estimate window handed from one subsystem to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    /// Instant at which the receiver used it.
    pub t: usize,
    pub from: usize,
    pub to: usize,
    /// Number of samples in the window sent.
    pub samples: usize,
}

#[derive(Debug, Clone)]
struct LocalMemory<T: Real> {
    prior_start: usize,
    prior: DVector<T>,
    /// Optimal window of the previous instant and its first sample index.
    last: Option<(usize, MheResult<T>)>,
}

#[derive(Debug, Clone)]
pub struct CoordinatorState<T: Real> {
    /// Index of the next sample to process.
    pub t: usize,
    pub dims: Dims,
    pub estimators: Vec<SubsystemEstimator<T>>,
    pub initial_guess: DVector<T>,
    pub inputs: Vec<DVector<T>>,
    pub measurements: Vec<DVector<T>>,
    /// Assembled full augmented estimate per processed sample.
    pub estimates: Vec<DVector<T>>,
    pub log: Vec<Message>,
    memory: Vec<LocalMemory<T>>,
}

#[derive(Debug, Clone)]
pub struct DmheStep<T: Real> {
    pub t: usize,
    pub results: Vec<Option<MheResult<T>>>,
    pub errors: Vec<Option<String>>,
    /// Some local problem failed; its previous estimate was held.
    pub degraded: bool,
    pub estimate: DVector<T>,
}

impl<T: Real> CoordinatorState<T> {
    /// Step 1: every local estimator starts from the initial guess.
    pub fn new(dims: Dims, estimators: Vec<SubsystemEstimator<T>>, initial_guess: DVector<T>) -> Result<Self> {
        check_len("initial guess", &initial_guess, dims.augmented())?;
        if estimators.is_empty() {
            return Err(Error::InvalidArgument("no subsystem estimators".into()));
        }
        let memory = estimators
            .iter()
            .map(|e| {
                e.config.validate()?;
                Ok(LocalMemory { prior_start: 0, prior: initial_guess.select_rows(&e.spec.augmented(dims.states)), last: None })
            })
            .collect::<Result<_>>()?;
        Ok(CoordinatorState {
            t: 0,
            dims,
            estimators,
            initial_guess,
            inputs: Vec::new(),
            measurements: Vec::new(),
            estimates: Vec::new(),
            log: Vec::new(),
            memory,
        })
    }

    /// Latest full augmented estimate, or the initial guess before the first step.
    pub fn current(&self) -> &DVector<T> {
        self.estimates.last().unwrap_or(&self.initial_guess)
    }

    /// Full augmented vectors for samples `t0..=t` as seen by estimator `i`: the
    /// other estimators' previous-instant windows, held at their newest value.
    fn external(&self, i: usize, t0: usize, t: usize) -> Vec<DVector<T>> {
        let nx = self.dims.states;
        let base = self.current();
        (t0..=t)
            .map(|l| {
                let mut e = base.clone();
                for (j, (est, mem)) in self.estimators.iter().zip(&self.memory).enumerate() {
                    if j == i {
                        continue;
                    }
                    if let Some((start, res)) = &mem.last {
                        let k = l.saturating_sub(*start).min(res.window.len() - 1);
                        for (pos, idx) in est.spec.augmented(nx).into_iter().enumerate() {
                            e[idx] = res.window[k][pos];
                        }
                    }
                }
                e
            })
            .collect()
    }

    fn problem(&self, i: usize, unselected: &[usize]) -> MheProblem<T> {
        let t = self.t;
        let est = &self.estimators[i];
        let mem = &self.memory[i];
        let spec = &est.spec;
        let t0 = mem.prior_start;
        let local = spec.augmented(self.dims.states);
        let frozen = local.iter().enumerate().filter(|(_, g)| unselected.contains(g)).map(|(k, _)| k).collect();
        let warm_start = mem.last.as_ref().map(|(start, prev)| {
            let shift = t0 - start;
            let z0 = prev.window[shift.min(prev.window.len() - 1)].clone();
            let mut ws: Vec<DVector<T>> = prev.disturbances.iter().skip(shift).cloned().collect();
            ws.resize(t - t0, DVector::zeros(spec.states.len()));
            (z0, ws)
        });
        MheProblem {
            states: spec.states.clone(),
            params: spec.params.clone(),
            outputs: spec.outputs.clone(),
            inputs: self.inputs[t0..t].to_vec(),
            measurements: self.measurements[t0..=t].iter().map(|y| y.select_rows(&spec.outputs)).collect(),
            external: self.external(i, t0, t),
            prior: mem.prior.clone(),
            frozen,
            arrival_covariance: None,
            warm_start,
        }
    }
}

/// Steps 2–4 at one instant: assemble every local problem from previous-instant
/// neighbour estimates, solve them in parallel, then publish all results at once.
///
/// `input` is the input applied between the previous sample and this one.
/// `unselected` lists augmented indices frozen at this instant.
pub fn dmhe_step<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    coord: &mut CoordinatorState<T>,
    input: Option<&DVector<T>>,
    measurement: &DVector<T>,
    unselected: &[usize],
) -> Result<DmheStep<T>> {
    let d = coord.dims;
    check_len("measurement", measurement, d.outputs)?;
    match (coord.t, input) {
        (0, None) => {}
        (0, Some(_)) => return Err(Error::InvalidArgument("no input precedes the first sample".into())),
        (_, Some(u)) => {
            check_len("input", u, d.inputs)?;
            coord.inputs.push(u.clone());
        }
        (_, None) => return Err(Error::InvalidArgument(format!("input into sample {} missing", coord.t))),
    }
    coord.measurements.push(measurement.clone());
    let t = coord.t;

    let problems: Vec<MheProblem<T>> = (0..coord.estimators.len()).map(|i| coord.problem(i, unselected)).collect();
    let outcomes: Vec<Result<MheResult<T>>> =
        problems.par_iter().zip(coord.estimators.par_iter()).map(|(pb, est)| solve_local_mhe(model, pb, &est.config)).collect();

    // barrier: nothing from instant t was visible to any solve above
    for (i, est) in coord.estimators.iter().enumerate() {
        for &j in &est.spec.neighbors {
            if let Some((_, res)) = &coord.memory[j].last {
                coord.log.push(Message { t, from: j, to: i, samples: res.window.len() });
            }
        }
    }
    let mut estimate = coord.current().clone();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::with_capacity(outcomes.len());
    let nx = d.states;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let local = coord.estimators[i].spec.augmented(nx);
        let horizon = coord.estimators[i].config.horizon;
        let mem = &mut coord.memory[i];
        match outcome {
            Ok(res) => {
                for (pos, &idx) in local.iter().enumerate() {
                    estimate[idx] = res.estimate[pos];
                }
                let t0 = mem.prior_start;
                let next_start = (t + 1).saturating_sub(horizon);
                if next_start > t0 {
                    mem.prior = res.window[next_start - t0].clone();
                    mem.prior_start = next_start;
                }
                mem.last = Some((t0, res.clone()));
                results.push(Some(res));
                errors.push(None);
            }
            Err(e) => {
                results.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    let degraded = errors.iter().any(Option::is_some);
    coord.estimates.push(estimate.clone());
    coord.t += 1;
    Ok(DmheStep { t, results, errors, degraded, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::solve_centralized_mhe;
    use crate::model::{simulate, LinearModel, NoiseSpec};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn spec(id: usize, states: Vec<usize>, outputs: Vec<usize>) -> SubsystemSpec {
        SubsystemSpec { id, states, params: vec![], outputs, inputs: vec![], interactions: vec![], neighbors: vec![] }
    }

    fn cfg(n: usize, h: usize) -> MheConfig<f64> {
        MheConfig::new(h, DMatrix::identity(n, n) * 0.01, DMatrix::identity(n, n) * 0.04, DMatrix::identity(n, n) * 0.5).unwrap()
    }

    #[test]
    fn single_subsystem_equals_local_solve() {
        let model = LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.7]), DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        let inputs = vec![v(&[0.0]); 6];
        let noise = NoiseSpec::new(vec![0.01, 0.01], vec![0.02, 0.02], 4).unwrap();
        let traj = simulate(&model, &v(&[1.0, -1.0]), &v(&[]), &inputs, 1.0, &noise).unwrap();
        let guess = v(&[0.8, -0.7]);
        let c = cfg(2, 3);
        let mut coord =
            CoordinatorState::new(model.dims(), vec![SubsystemEstimator { spec: spec(0, vec![0, 1], vec![0, 1]), config: c.clone() }], guess.clone())
                .unwrap();
        let mut last = None;
        for t in 0..=3 {
            let u = (t > 0).then(|| &inputs[t - 1]);
            last = Some(dmhe_step(&model, &mut coord, u, &traj.measurements[t], &[]).unwrap());
        }
        let direct = solve_centralized_mhe(&model, inputs[0..3].to_vec(), traj.measurements[0..4].to_vec(), guess, &[], &c).unwrap();
        assert_relative_eq!(last.unwrap().estimate, direct.estimate, epsilon = 1e-8);
    }

    #[test]
    fn decoupled_subsystems_match_independent_runs() {
        let model = LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.7]), DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        let inputs = vec![v(&[0.0]); 8];
        let noise = NoiseSpec::new(vec![0.01, 0.01], vec![0.02, 0.02], 9).unwrap();
        let traj = simulate(&model, &v(&[1.0, -1.0]), &v(&[]), &inputs, 1.0, &noise).unwrap();
        let guess = v(&[0.8, -0.7]);
        let split = vec![
            SubsystemEstimator { spec: spec(0, vec![0], vec![0]), config: cfg(1, 3) },
            SubsystemEstimator { spec: spec(1, vec![1], vec![1]), config: cfg(1, 3) },
        ];
        let mut joint = CoordinatorState::new(model.dims(), split.clone(), guess.clone()).unwrap();
        let mut alone: Vec<CoordinatorState<f64>> =
            split.iter().map(|e| CoordinatorState::new(model.dims(), vec![e.clone()], guess.clone()).unwrap()).collect();
        for t in 0..=8 {
            let u = (t > 0).then(|| &inputs[t - 1]);
            let j = dmhe_step(&model, &mut joint, u, &traj.measurements[t], &[]).unwrap();
            for (k, c) in alone.iter_mut().enumerate() {
                let a = dmhe_step(&model, c, u, &traj.measurements[t], &[]).unwrap();
                assert_eq!(a.estimate[k], j.estimate[k]);
            }
        }
        assert!(joint.log.is_empty());
    }

    #[test]
    fn missing_input_rejected() {
        let model = LinearModel::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let mut coord =
            CoordinatorState::new(model.dims(), vec![SubsystemEstimator { spec: spec(0, vec![0], vec![0]), config: cfg(1, 2) }], v(&[0.0])).unwrap();
        dmhe_step(&model, &mut coord, None, &v(&[1.0]), &[]).unwrap();
        assert!(dmhe_step(&model, &mut coord, None, &v(&[1.0]), &[]).is_err());
    }
}
