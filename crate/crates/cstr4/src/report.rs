//! Files written by a benchmark run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dspe_core::model::fmt_num;
use dspe_core::selection::tally_selection;
use serde_json::{json, Value};

use crate::detect::{cstr4_graph, grouping_modularity, with_states, PUBLISHED_PARAMS};
use crate::error::Result;
use crate::params::{augmented_index, augmented_names, INPUT_NAMES, N_STATES, OUTPUT_NAMES};
use crate::run::CaseRun;

/// Published column order of the selection tally.
pub const TALLY_ORDER: [&str; 29] = [
    "CA1", "T1", "CA2", "T2", "CA3", "T3", "CA4", "T4", "F1", "F2", "F3", "V1", "V2", "V3", "V4", "Fr1", "Fr2", "E1", "E2", "E3", "R", "F01", "F02",
    "F03", "F04", "C01", "C02", "C03", "C04",
];

pub fn tally_order() -> Vec<usize> {
    TALLY_ORDER.iter().map(|n| augmented_index(n).expect("tally names are model variables")).collect()
}

/// Truth and estimate of every augmented entry per sample.
pub fn write_trajectory<W: Write>(run: &CaseRun, mut w: W) -> Result<()> {
    let names = augmented_names();
    let mut header = vec!["k".to_string(), "t_h".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("{n}_hat")));
    header.extend(OUTPUT_NAMES.iter().map(|n| n.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for (k, est) in run.estimates.iter().enumerate() {
        let z = run.truth.augmented_state(k);
        let mut row = vec![k.to_string(), fmt_num(run.truth.dt * k as f64)];
        row.extend(z.iter().map(|v| fmt_num(*v)));
        row.extend(est.iter().map(|v| fmt_num(*v)));
        row.extend(run.truth.measurements[k].iter().map(|v| fmt_num(*v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_rmse<W: Write>(run: &CaseRun, mut w: W) -> Result<()> {
    writeln!(w, "k,rmse_x,rmse_theta,rmse_xtheta")?;
    let r = &run.rmse;
    for k in 0..r.x.len() {
        writeln!(w, "{k},{},{},{}", fmt_num(r.x[k]), fmt_num(r.theta[k]), fmt_num(r.xtheta[k]))?;
    }
    Ok(())
}

/// Average RMSEs in percent.
pub fn summary(run: &CaseRun) -> Value {
    let c = &run.config;
    json!({
        "case": c.case,
        "seed": c.seed,
        "steps": c.steps,
        "rmse_x_pct": 100.0 * run.rmse.mean_x,
        "rmse_theta_pct": 100.0 * run.rmse.mean_theta,
        "rmse_xtheta_pct": 100.0 * run.rmse.mean_xtheta,
        "degraded_steps": run.degraded_steps,
        "unconverged_solves": run.unconverged_solves,
        "solver_iterations": run.solver_iterations,
    })
}

/// Counts per variable in tally order.
pub fn write_tally<W: Write>(run: &CaseRun, w: W) -> Result<bool> {
    let Some(sel) = &run.selections else {
        return Ok(false);
    };
    let tally = tally_selection(sel)?;
    tally.write_csv(w, &augmented_names(), Some(&tally_order()))?;
    Ok(true)
}

/// Subsystems of the run with Ω of the grouping on the detection graph.
pub fn decomposition(run: &CaseRun) -> Result<Value> {
    let c = &run.config;
    let specs = c.specs()?;
    let names = augmented_names();
    let g = cstr4_graph(&with_states(&PUBLISHED_PARAMS)?)?;
    // Ω is reported when the grouping partitions exactly the graph variables
    let on_graph = c.groups.iter().flatten().all(|n| g.find_name(n).is_some());
    let omega = if on_graph && c.groups.len() > 1 { grouping_modularity(&g, &c.groups).ok() } else { None };
    let subsystems: Vec<Value> = specs
        .iter()
        .map(|s| {
            json!({
                "id": s.id + 1,
                "states": s.states.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
                "parameters": s.params.iter().map(|&p| names[N_STATES + p].clone()).collect::<Vec<_>>(),
                "outputs": s.outputs.iter().map(|&k| OUTPUT_NAMES[k]).collect::<Vec<_>>(),
                "inputs": s.inputs.iter().map(|&k| INPUT_NAMES[k]).collect::<Vec<_>>(),
                "interactions": s.interactions.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
                "neighbors": s.neighbors.iter().map(|n| n + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "case": c.case, "omega": omega, "subsystems": subsystems }))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Writes every artifact of `run` under `dir` with prefix `case{N}_`; returns the paths.
pub fn write_all(run: &CaseRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let p = format!("case{}_", run.config.case);
    let mut out = Vec::new();
    let mut emit = |name: String, f: &dyn Fn(&mut BufWriter<File>) -> Result<bool>| -> Result<()> {
        let mut w = create(dir, &name)?;
        let keep = f(&mut w)?;
        w.flush()?;
        drop(w);
        if keep {
            out.push(dir.join(&name));
        } else {
            fs::remove_file(dir.join(&name))?;
        }
        Ok(())
    };
    emit(format!("{p}trajectory.csv"), &|w| write_trajectory(run, w).map(|_| true))?;
    emit(format!("{p}rmse.csv"), &|w| write_rmse(run, w).map(|_| true))?;
    emit(format!("{p}selection_tally.csv"), &|w| write_tally(run, w))?;
    let s = dir.join(format!("{p}summary.json"));
    write_json(&s, &summary(run))?;
    out.push(s);
    let d = dir.join(format!("{p}decomposition.json"));
    write_json(&d, &decomposition(run)?)?;
    out.push(d);
    Ok(out)
}

/// Several runs side by side: one column per case, mean over seeds.
pub fn comparison(runs: &[CaseRun]) -> Value {
    let mut cases: Vec<u8> = runs.iter().map(|r| r.config.case).collect();
    cases.sort_unstable();
    cases.dedup();
    let rows: Vec<Value> = cases
        .iter()
        .map(|&c| {
            let rs: Vec<&CaseRun> = runs.iter().filter(|r| r.config.case == c).collect();
            let n = rs.len() as f64;
            let avg = |f: fn(&CaseRun) -> f64| 100.0 * rs.iter().map(|r| f(r)).sum::<f64>() / n;
            json!({
                "case": c,
                "seeds": rs.iter().map(|r| r.config.seed).collect::<Vec<_>>(),
                "rmse_x_pct": avg(|r| r.rmse.mean_x),
                "rmse_theta_pct": avg(|r| r.rmse.mean_theta),
                "rmse_xtheta_pct": avg(|r| r.rmse.mean_xtheta),
            })
        })
        .collect();
    json!({ "cases": rows })
}
