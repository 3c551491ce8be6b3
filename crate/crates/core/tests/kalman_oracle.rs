//! Unconstrained linear MHE with the exact arrival-cost recursion reproduces
//! the Kalman filter.

use dspe_core::mhe::{solve_local_mhe, MheConfig, MheProblem};
use dspe_core::model::{simulate, LinearModel, NoiseSpec, NonlinearModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Kalman {
    /// `x̂(k|k−1)`, `P(k|k−1)` for every k
    predicted: Vec<(DVector<f64>, DMatrix<f64>)>,
    filtered: Vec<DVector<f64>>,
}

fn kalman(m: &LinearModel<f64>, ys: &[DVector<f64>], x0: &DVector<f64>, p0: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Kalman {
    let mut xp = x0.clone();
    let mut pp = p0.clone();
    let mut predicted = Vec::new();
    let mut filtered = Vec::new();
    for y in ys {
        predicted.push((xp.clone(), pp.clone()));
        let s = &m.c * &pp * m.c.transpose() + r;
        let k = &pp * m.c.transpose() * s.try_inverse().unwrap();
        let xf = &xp + &k * (y - &m.c * &xp);
        let n = pp.nrows();
        let pf = (DMatrix::identity(n, n) - &k * &m.c) * &pp;
        filtered.push(xf.clone());
        xp = &m.a * xf;
        pp = &m.a * pf * m.a.transpose() + q;
        pp = (&pp + pp.transpose()) * 0.5;
    }
    Kalman { predicted, filtered }
}

fn random_stable(rng: &mut ChaCha8Rng, n: usize, ny: usize) -> LinearModel<f64> {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let radius = a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
    a *= 0.9 / radius.max(1e-3);
    let c = DMatrix::from_fn(ny, n, |_, _| rng.random_range(-1.0..1.0));
    LinearModel::new(a, DMatrix::zeros(n, 0), c).unwrap()
}

#[test]
fn mhe_matches_kalman_filter_on_random_stable_systems() {
    let steps = 50;
    let horizon = 5;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 + (seed as usize % 2);
        let ny = 1 + (seed as usize % 2);
        let m = random_stable(&mut rng, n, ny);
        let q = DMatrix::identity(n, n) * 0.01;
        let r = DMatrix::identity(ny, ny) * 0.04;
        let inputs = vec![DVector::zeros(0); steps];
        let noise = NoiseSpec::new(vec![0.1; n], vec![0.2; ny], seed).unwrap();
        let traj = simulate(&m, &DVector::from_element(n, 1.0), &DVector::zeros(0), &inputs, 1.0, &noise).unwrap();
        let x0 = DVector::zeros(n);
        let p0 = DMatrix::identity(n, n);
        let kf = kalman(&m, &traj.measurements, &x0, &p0, &q, &r);
        let cfg = MheConfig::new(horizon, q.clone(), r.clone(), p0.clone()).unwrap();

        for t in 0..=steps {
            let t0 = t.saturating_sub(horizon);
            let (prior, p) = kf.predicted[t0].clone();
            let pb = MheProblem {
                states: (0..n).collect(),
                params: vec![],
                outputs: (0..ny).collect(),
                inputs: inputs[t0..t].to_vec(),
                measurements: traj.measurements[t0..=t].to_vec(),
                external: vec![DVector::zeros(n); t - t0 + 1],
                prior,
                frozen: vec![],
                arrival_covariance: Some(p),
                warm_start: None,
            };
            let res = solve_local_mhe(&m, &pb, &cfg).unwrap();
            assert!(res.converged, "seed {seed} t {t}");
            let kfx = &kf.filtered[t];
            let err = (&res.estimate - kfx).norm() / kfx.norm().max(1e-3);
            assert!(err <= 1e-6, "seed {seed} t {t}: relative gap {err:e}");
        }
        assert_eq!(m.dims().states, n);
    }
}
