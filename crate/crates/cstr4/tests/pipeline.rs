use dspe_cstr4::case::{published_groups, CaseConfig};
use dspe_cstr4::detect::{cstr4_graph, grouping_modularity, with_states, PUBLISHED_PARAMS};
use dspe_cstr4::params::{augmented_index, N_STATES};
use dspe_cstr4::report::{comparison, write_all};
use dspe_cstr4::run::{case_schedule, run_case_with};
use dspe_cstr4::{run_case, run_cases, Error};

fn short(case: u8, steps: usize) -> CaseConfig {
    let mut c = CaseConfig::published(case, 2).unwrap();
    c.steps = steps;
    c
}

#[test]
fn perfect_information_recovers_the_truth() {
    for case in 1..=4 {
        let mut c = short(case, 25);
        c.mismatch = 0.0;
        c.process_noise = 0.0;
        c.measurement_noise = 0.0;
        let run = run_case(&c).unwrap();
        assert_eq!(run.degraded_steps, 0);
        assert!(run.rmse.mean_xtheta < 1e-6, "case {case}: {}", run.rmse.mean_xtheta);
    }
}

#[test]
fn parallel_runs_equal_sequential_ones() {
    let cfgs: Vec<CaseConfig> = (1..=4).map(|c| short(c, 15)).collect();
    let par = run_cases(&cfgs).unwrap();
    for (c, p) in cfgs.iter().zip(&par) {
        let s = run_case(c).unwrap();
        assert_eq!(p.config.case, c.case);
        assert_eq!(p.estimates, s.estimates);
    }
    let table = comparison(&par);
    assert_eq!(table["cases"].as_array().unwrap().len(), 4);
}

#[test]
fn schedule_keeps_the_states_and_is_passed_through() {
    let c = short(2, 12);
    let sched = case_schedule(&c).unwrap();
    assert_eq!(sched.len(), 12);
    for s in &sched {
        assert_eq!(&s.selected[..N_STATES], &(0..N_STATES).collect::<Vec<_>>()[..]);
    }
    let a = run_case_with(&c, Some(sched)).unwrap();
    let b = run_case(&c).unwrap();
    assert_eq!(a.estimates, b.estimates);
}

#[test]
fn frozen_parameters_stay_at_the_initial_guess() {
    // case 2 leaves the parameters outside its groups at their guess throughout
    let c = short(2, 20);
    let run = run_case(&c).unwrap();
    let guess = c.initial_guess();
    let e1 = augmented_index("E1").unwrap();
    for est in &run.estimates {
        assert_eq!(est[e1], guess[e1]);
    }
}

#[test]
fn artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_case(&short(2, 12)).unwrap();
    let files = write_all(&run, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for want in ["case2_trajectory.csv", "case2_rmse.csv", "case2_selection_tally.csv", "case2_summary.json", "case2_decomposition.json"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    let rmse = std::fs::read_to_string(dir.path().join("case2_rmse.csv")).unwrap();
    assert_eq!(rmse.lines().count(), 13);
    let tally = std::fs::read_to_string(dir.path().join("case2_selection_tally.csv")).unwrap();
    assert!(tally.lines().nth(1).unwrap().starts_with("CA1,"));
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("case2_decomposition.json")).unwrap()).unwrap();
    assert_eq!(d["subsystems"].as_array().unwrap().len(), 3);
    assert!(d["omega"].as_f64().is_some());

    // case 4 has no selection tally
    let run4 = run_case(&short(4, 5)).unwrap();
    let files = write_all(&run4, dir.path()).unwrap();
    assert!(files.iter().all(|p| !p.ends_with("case4_selection_tally.csv")));
    assert!(!dir.path().join("case4_selection_tally.csv").exists());
}

#[test]
fn malformed_groupings_are_rejected() {
    let mut c = short(2, 5);
    c.groups[0].push("T2".into());
    assert!(matches!(run_case(&c), Err(Error::InvalidCase(_))));
    let mut c = short(2, 5);
    c.groups[0].push("nope".into());
    assert!(c.validate().is_err());
    assert!(CaseConfig::published(5, 1).is_err());
}

#[test]
fn case_groupings_score_on_the_full_graph() {
    let g = cstr4_graph(&with_states(&PUBLISHED_PARAMS).unwrap()).unwrap();
    let own = |c: u8| -> Vec<Vec<String>> { published_groups(c).unwrap().into_iter().map(|g| g.into_iter().map(String::from).collect()).collect() };
    let o2 = grouping_modularity(&g, &own(2)).unwrap();
    let o3 = grouping_modularity(&g, &own(3)).unwrap();
    // frozen from the constructed graph: 21 nodes, 40 edges
    assert!((o2 - 0.44625).abs() < 1e-12, "{o2}");
    assert!((o3 - 0.4975).abs() < 1e-12, "{o3}");
}
