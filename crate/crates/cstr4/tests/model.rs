use dspe_core::model::{augment, NoiseSpec, NonlinearModel};
use dspe_core::sensitivity::build_sensitivity_matrix;
use dspe_cstr4::case::CaseConfig;
use dspe_cstr4::model::{cstr4_model, nominal_heat, nominal_theta};
use dspe_cstr4::params::{Cstr4Params, N_AUGMENTED, SAMPLE_TIME};
use dspe_cstr4::rk4::{discretize_rk4, rk4_step};
use dspe_cstr4::run::{nominal_trajectory, simulate_truth};
use dspe_cstr4::{cstr4_rhs, steady_state, Cstr4Field};
use nalgebra::DVector;
use proptest::prelude::*;

fn integrate(p: &Cstr4Params<f64>, x0: &DVector<f64>, horizon: f64, n: usize) -> DVector<f64> {
    let u = nominal_heat();
    let h = horizon / n as f64;
    let mut x = x0.clone();
    for _ in 0..n {
        x = rk4_step(|s| Ok(cstr4_rhs(s, &u, p).unwrap()), &x, h).unwrap();
    }
    x
}

#[test]
fn rk4_is_fourth_order_on_the_cstr_field() {
    let p = Cstr4Params::nominal();
    let x0 = steady_state();
    // 30 samples at Δt, Δt/2 and a Δt/16 reference
    let horizon = 30.0 * SAMPLE_TIME;
    let reference = integrate(&p, &x0, horizon, 30 * 16);
    let e1 = (integrate(&p, &x0, horizon, 30) - &reference).norm();
    let e2 = (integrate(&p, &x0, horizon, 60) - &reference).norm();
    let order = (e1 / e2).log2();
    assert!((3.8..=4.2).contains(&order), "observed order {order} ({e1:e}, {e2:e})");
}

#[test]
fn pure_mixing_stays_in_the_convex_hull_of_feeds_and_start() {
    let mut p = Cstr4Params::nominal();
    p.k = [0.0; 3];
    let model = discretize_rk4(Cstr4Field { params: p }, SAMPLE_TIME).unwrap();
    let u = DVector::zeros(4);
    let th = p.theta();
    let mut x = DVector::from_column_slice(&[1.0, 420.0, 3.5, 280.0, 0.2, 350.0, 2.0, 330.0]);
    let c_lo = p.c0.iter().chain([1.0, 3.5, 0.2, 2.0].iter()).fold(f64::INFINITY, |a, b| a.min(*b));
    let c_hi = p.c0.iter().chain([1.0, 3.5, 0.2, 2.0].iter()).fold(0.0f64, |a, b| a.max(*b));
    for k in 0..500 {
        x = model.transition(&x, &u, &th).unwrap();
        for i in 0..4 {
            assert!(x[2 * i] >= c_lo - 1e-12 && x[2 * i] <= c_hi + 1e-12, "step {k}: C{} = {}", i + 1, x[2 * i]);
            assert!(x[2 * i + 1] >= 280.0 - 1e-9 && x[2 * i + 1] <= 420.0 + 1e-9, "step {k}: T{} = {}", i + 1, x[2 * i + 1]);
        }
    }
    // and relaxes to the feed temperature
    for i in 0..4 {
        assert!((x[2 * i + 1] - 300.0).abs() < 1.0);
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let m64 = cstr4_model::<f64>();
    let m32 = cstr4_model::<f32>();
    let mut x64: DVector<f64> = steady_state();
    let mut x32: DVector<f32> = steady_state();
    let (u64_, th64) = (nominal_heat::<f64>(), nominal_theta::<f64>());
    let (u32_, th32) = (nominal_heat::<f32>(), nominal_theta::<f32>());
    for _ in 0..20 {
        x64 = m64.transition(&x64, &u64_, &th64).unwrap();
        x32 = m32.transition(&x32, &u32_, &th32).unwrap();
    }
    for (a, b) in x64.iter().zip(x32.iter()) {
        assert!((a - *b as f64).abs() / a.abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn noisy_truth_is_reproducible_per_seed() {
    let cfg = CaseConfig::published(2, 3).unwrap();
    let a = simulate_truth(40, &cfg.noise().unwrap()).unwrap();
    let b = simulate_truth(40, &cfg.noise().unwrap()).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.measurements, b.measurements);
    let other = CaseConfig::published(2, 4).unwrap();
    let c = simulate_truth(40, &other.noise().unwrap()).unwrap();
    assert_ne!(a.measurements, c.measurements);
    // noise-free is the nominal run
    let n = simulate_truth(40, &NoiseSpec::noiseless()).unwrap();
    assert_eq!(n.states, nominal_trajectory(40).unwrap().states);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Column `j` of the window sensitivity against a two-sided resimulation.
    #[test]
    fn window_sensitivity_matches_resimulation(anchor in 9usize..120, j in 0usize..N_AUGMENTED, row in 0usize..40) {
        let window = 10;
        let traj = nominal_trajectory(anchor + 1).unwrap();
        let aug = augment(cstr4_model::<f64>());
        let s = build_sensitivity_matrix(&aug, &traj, anchor, window).unwrap().matrix;
        let start = anchor + 1 - window;
        let z0 = traj.augmented_state(start);
        let h = 1e-4 * z0[j].abs();
        let output_at = |z: &DVector<f64>| {
            let (i, k) = (row / 4, row % 4);
            let mut z = z.clone();
            for l in 0..i {
                z = aug.transition(&z, &traj.inputs[start + l]).unwrap();
            }
            aug.output(&z).unwrap()[k]
        };
        let mut zp = z0.clone();
        zp[j] += h;
        let mut zm = z0.clone();
        zm[j] -= h;
        let fd = (output_at(&zp) - output_at(&zm)) / (2.0 * h);
        let scale = s.column(j).amax();
        prop_assert!((s[(row, j)] - fd).abs() <= 1e-3 * fd.abs().max(1e-3 * scale), "S {} fd {}", s[(row, j)], fd);
    }
}
