use dspe_core::model::{augment, simulate, LinearModel, NoiseSpec};
use dspe_core::sensitivity::{
    build_observability_matrix, build_sensitivity_matrix, normalize_sensitivity, propagate_param_sensitivity, rank_and_condition,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, n: usize, np: usize, ny: usize) -> LinearModel<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
    let g = DMatrix::from_fn(n, np, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(ny, n, |_, _| rng.random_range(-1.0..1.0));
    LinearModel::with_params(a, DMatrix::zeros(n, 1), g, c, DMatrix::zeros(ny, np)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sensitivity_equals_observability_and_rank_is_bounded(seed in any::<u64>(), window in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, np, ny) = (rng.random_range(1..4), rng.random_range(0..3), rng.random_range(1..3));
        let m = random_model(&mut rng, n, np, ny);
        let theta = DVector::from_fn(np, |_, _| rng.random_range(-1.0..1.0));
        let inputs = vec![DVector::zeros(1); 8];
        let traj = simulate(&m, &DVector::from_element(n, 1.0), &theta, &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
        let aug = augment(&m);
        let t = 7;
        let s = build_sensitivity_matrix(&aug, &traj, t, window).unwrap();
        let o = build_observability_matrix(&aug, &traj, t, window).unwrap();
        prop_assert_eq!(&s.matrix, &o);
        let r = rank_and_condition(&o, None).unwrap();
        prop_assert!(r.rank <= (n + np).min(window * ny));
        prop_assert!(r.condition >= 1.0);
        // scaling does not change rank
        let zs = DVector::from_fn(n + np, |_, _| rng.random_range(0.5..2.0));
        let ys = DVector::from_fn(ny, |_, _| rng.random_range(0.5..2.0));
        let scaled = normalize_sensitivity(&s, &zs, &ys).unwrap();
        prop_assert_eq!(rank_and_condition(&scaled.matrix, None).unwrap().rank, r.rank);
    }

    #[test]
    fn parameter_sensitivity_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&mut rng, 2, 2, 1);
        let theta = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let inputs = vec![DVector::zeros(1); 6];
        let x0 = DVector::from_element(2, 1.0);
        let traj = simulate(&m, &x0, &theta, &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
        let sens = propagate_param_sensitivity(&m, &traj).unwrap();
        let h = 1e-6;
        for p in 0..2 {
            let mut tp = theta.clone();
            tp[p] += h;
            let mut tm = theta.clone();
            tm[p] -= h;
            let up = simulate(&m, &x0, &tp, &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
            let dn = simulate(&m, &x0, &tm, &inputs, 1.0, &NoiseSpec::noiseless()).unwrap();
            for ((u, d), s) in up.outputs.iter().zip(&dn.outputs).zip(&sens).take(traj.len()) {
                let fd = (u - d) / (2.0 * h);
                prop_assert!((fd[0] - s.output[(0, p)]).abs() <= 1e-6);
            }
        }
    }
}
