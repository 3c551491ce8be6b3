use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dspe_core::graph::{modularity, Partition};
use dspe_core::model::fmt_num;
use dspe_core::selection::{tally_selection, SelectionResult};
use dspe_core::sensitivity::rank_and_condition_with_limit;
use dspe_cstr4::case::CaseConfig;
use dspe_cstr4::detect::{cstr4_graph, detect, majority, with_states};
use dspe_cstr4::params::{augmented_names, N_AUGMENTED, N_STATES};
use dspe_cstr4::report::{comparison, summary, tally_order, write_all, write_json};
use dspe_cstr4::run::{admissible_seeds, normalized_sensitivity, selection_schedule, simulate_truth};
use dspe_cstr4::{run_cases, CaseRun};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Which published cases `bench` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseChoice {
    One(u8),
    All,
}

impl std::str::FromStr for CaseChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(CaseChoice::All),
            "1" | "2" | "3" | "4" => Ok(CaseChoice::One(s.parse().unwrap())),
            _ => Err(format!("expected 1, 2, 3, 4 or all, got `{s}`")),
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

fn finish(path: PathBuf, mut w: BufWriter<File>) -> Result<PathBuf> {
    w.flush()?;
    Ok(path)
}

pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let snap = cfg.snapshot(&cfg.out)?;
    let case = cfg.case_config(cfg.estimation.case)?;
    let traj = simulate_truth(cfg.steps, &case.noise()?)?;
    let (path, mut w) = create(&cfg.out, "trajectory.csv")?;
    traj.write_csv(&mut w)?;
    Ok(vec![snap, finish(path, w)?])
}

/// Per-sample selection along the noise-free nominal run.
fn schedule(cfg: &RunConfig) -> Result<(CaseConfig, Vec<SelectionResult<f64>>)> {
    let case = cfg.case_config(1)?;
    let nominal = dspe_cstr4::run::nominal_trajectory(cfg.steps.max(case.window))?;
    let sel = selection_schedule(&nominal, cfg.steps, case.window, case.alpha()?)?;
    Ok((case, sel))
}

pub fn analyze(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let snap = cfg.snapshot(&cfg.out)?;
    let window = cfg.window();
    let nominal = dspe_cstr4::run::nominal_trajectory(cfg.steps.max(window))?;
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut windows = Vec::with_capacity(cfg.steps);
    let (mut full, mut well, mut tol) = (0, 0, 0.0);
    let mut first_sv = Vec::new();
    for k in 0..cfg.steps {
        let s = normalized_sensitivity(&nominal, k, window)?;
        let r = rank_and_condition_with_limit(&s, cfg.analysis.rank_tol, cfg.analysis.condition_limit)?;
        *hist.entry(r.rank).or_default() += 1;
        full += usize::from(r.full_rank);
        well += usize::from(r.well_conditioned);
        tol = r.rank_tol;
        if k == 0 {
            first_sv = r.singular_values.clone();
        }
        windows.push(json!({ "k": k, "window_end": dspe_cstr4::run::window_end(k, window), "rank": r.rank, "condition": r.condition, "well_conditioned": r.well_conditioned }));
    }
    let modal = hist.iter().max_by_key(|(r, c)| (**c, std::cmp::Reverse(**r))).map(|(r, _)| *r).unwrap_or(0);
    let (case, sel) = schedule(cfg)?;
    let report = json!({
        "model": cfg.model,
        "window": window,
        "steps": cfg.steps,
        "augmented_dim": N_AUGMENTED,
        "rank_tol": tol,
        "condition_limit": cfg.analysis.condition_limit,
        "modal_rank": modal,
        "rank_histogram": hist.iter().map(|(r, c)| (r.to_string(), json!(c))).collect::<serde_json::Map<String, Value>>(),
        "full_rank_windows": full,
        "well_conditioned_windows": well,
        "cutoff": case.alpha()?,
        "first_window_singular_values": first_sv,
        "windows": windows,
    });
    let obs = cfg.out.join("observability.json");
    ensure_dir(&cfg.out)?;
    write_json(&obs, &report)?;

    let names = augmented_names();
    let tally = tally_selection(&sel)?;
    let (tally_path, mut w) = create(&cfg.out, "selection_tally.csv")?;
    tally.write_csv(&mut w, &names, Some(&tally_order()))?;
    let tally_path = finish(tally_path, w)?;

    let (sel_path, mut w) = create(&cfg.out, "selections.csv")?;
    writeln!(w, "k,selected,stop_norm")?;
    for (k, s) in sel.iter().enumerate() {
        let chosen: Vec<&str> = s.selected.iter().map(|&j| names[j].as_str()).collect();
        writeln!(w, "{k},{},{}", chosen.join(" "), s.stop_norm.map(fmt_num).unwrap_or_default())?;
    }
    let sel_path = finish(sel_path, w)?;
    Ok(vec![snap, obs, tally_path, sel_path])
}

/// Graph variables: the configured parameters, or those selected in a
/// majority of samples.
fn graph_params(cfg: &RunConfig) -> Result<Vec<String>> {
    if let Some(p) = &cfg.decomposition.params {
        return Ok(p.clone());
    }
    let (_, sel) = schedule(cfg)?;
    let names = augmented_names();
    Ok(majority(&tally_selection(&sel)?).into_iter().filter(|&j| j >= N_STATES).map(|j| names[j].clone()).collect())
}

pub fn decompose(cfg: &RunConfig, single: bool) -> Result<Vec<PathBuf>> {
    let snap = cfg.snapshot(&cfg.out)?;
    let params = graph_params(cfg)?;
    let refs: Vec<&str> = params.iter().map(String::as_str).collect();
    let selected = with_states(&refs).map_err(|e| CliError::Config(e.to_string()))?;
    let g = cstr4_graph(&selected)?;
    let mut report = if single {
        let whole = Partition::whole(g.len());
        json!({ "omega": modularity(&g, &whole)?, "communities": [g.nodes.iter().map(|n| n.name.clone()).collect::<Vec<_>>()] })
    } else {
        detect(&g, cfg.window(), cfg.decomposition.anchor)?.to_json(&g)
    };
    report["parameters"] = json!(params);
    report["graph"] = json!({ "nodes": g.len(), "edges": g.edges });
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("decomposition.json");
    write_json(&path, &report)?;
    let (edges, mut w) = create(&cfg.out, "graph_edges.csv")?;
    g.write_edge_list(&mut w)?;
    Ok(vec![snap, path, finish(edges, w)?])
}

fn print_summary(run: &CaseRun) {
    let s = summary(run);
    // a closed pipe is not worth failing the run over
    let _ = writeln!(
        std::io::stdout(),
        "case {} seed {}: RMSE_x {:.2}%  RMSE_theta {:.2}%  RMSE_xtheta {:.2}%",
        s["case"],
        s["seed"],
        run.rmse.mean_x * 100.0,
        run.rmse.mean_theta * 100.0,
        run.rmse.mean_xtheta * 100.0
    );
}

pub fn estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let case = cfg.estimation_config()?;
    let mut files = vec![cfg.snapshot(&cfg.out)?];
    let run = dspe_cstr4::run_case(&case)?;
    print_summary(&run);
    files.extend(write_all(&run, &cfg.out)?);
    Ok(files)
}

pub fn bench(cfg: &RunConfig, benchmark: &str, cases: CaseChoice) -> Result<Vec<PathBuf>> {
    if benchmark != dspe_cstr4::model::MODEL_ID {
        return Err(CliError::Config(format!("unknown benchmark `{benchmark}`")));
    }
    let ids: Vec<u8> = match cases {
        CaseChoice::One(c) => vec![c],
        CaseChoice::All => vec![1, 2, 3, 4],
    };
    let snap = cfg.snapshot(&cfg.out)?;
    let seeds = admissible_seeds(&cfg.case_config(ids[0])?, cfg.seed, cfg.bench.seeds)?;
    let mut cfgs = Vec::new();
    for &c in &ids {
        for &s in &seeds {
            let mut case = cfg.case_config(c)?;
            case.seed = s;
            cfgs.push(case);
        }
    }
    let runs = run_cases(&cfgs)?;
    let mut files = vec![snap];
    for run in &runs {
        print_summary(run);
        let dir = if seeds.len() > 1 { cfg.out.join(format!("seed{}", run.config.seed)) } else { cfg.out.clone() };
        files.extend(write_all(run, &dir)?);
    }
    let path = cfg.out.join("comparison.json");
    write_json(&path, &comparison(&runs))?;
    files.push(path);
    Ok(files)
}
