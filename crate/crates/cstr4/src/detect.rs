//! Community detection on the CSTR variable graph.

use dspe_core::graph::{
    build_graph, decompose, modularity, node_order, subsystem_observability_check, DecompositionResult, DirectedGraph, GraphOptions, NodeKind,
    Partition,
};
use dspe_core::model::augment;
use dspe_core::selection::SelectionTally;

use crate::error::{Error, Result, Stage, StageExt};
use crate::model::{augmented_scales, cstr4_model, nominal_heat, nominal_theta, output_scales};
use crate::params::{augmented_index, N_STATES, TEMPERATURES};
use crate::run::{nominal_trajectory, window_end};
use crate::steady::nominal_refined_steady_state;

/// Published parameter selection (at least 496 of 500 samples).
pub const PUBLISHED_PARAMS: [&str; 9] = ["F01", "F02", "F03", "F04", "V1", "V2", "V3", "V4", "Fr2"];

/// Louvain restarts: ascending order plus this many shuffled orders.
pub const SHUFFLED_ORDERS: u64 = 16;

/// Augmented indices of the states and the named parameters.
pub fn with_states(params: &[&str]) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..N_STATES).collect();
    for p in params {
        match augmented_index(p) {
            Some(j) if j >= N_STATES => idx.push(j),
            _ => return Err(Error::InvalidCase(format!("`{p}` is not a parameter"))),
        }
    }
    Ok(idx)
}

/// Augmented indices selected in more than half of the samples.
pub fn majority(tally: &SelectionTally) -> Vec<usize> {
    (0..tally.counts.len()).filter(|&j| 2 * tally.counts[j] > tally.total).collect()
}

/// Graph over `selected` plus the four outputs at the polished steady state.
pub fn cstr4_graph(selected: &[usize]) -> Result<DirectedGraph> {
    let xs = nominal_refined_steady_state().stage(Stage::Decomposition)?;
    let opts = GraphOptions { augmented_scales: Some(augmented_scales()), output_scales: Some(output_scales()), ..GraphOptions::default() };
    build_graph(&cstr4_model::<f64>(), selected, &xs, &nominal_heat(), &nominal_theta(), &opts).stage(Stage::Decomposition)
}

/// Partition of `g` putting each named group together; outputs join the group
/// holding their vessel's temperature.
pub fn grouping_partition(g: &DirectedGraph, groups: &[Vec<String>]) -> Result<Partition> {
    let mut labels = vec![usize::MAX; g.len()];
    for (c, group) in groups.iter().enumerate() {
        for name in group {
            if let Some(v) = g.find_name(name) {
                labels[v] = c;
            }
        }
    }
    for (v, node) in g.nodes.iter().enumerate() {
        if node.kind == NodeKind::Output {
            let temp = TEMPERATURES[node.index];
            if let Some(s) = g.find(NodeKind::State, temp) {
                labels[v] = labels[s];
            }
        }
    }
    if let Some(v) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::InvalidCase(format!("graph node {} is in no group", g.nodes[v].name)));
    }
    Ok(Partition::from_labels(&labels))
}

pub fn grouping_modularity(g: &DirectedGraph, groups: &[Vec<String>]) -> Result<f64> {
    modularity(g, &grouping_partition(g, groups)?).stage(Stage::Decomposition)
}

pub fn louvain_orders(n: usize) -> Vec<Vec<usize>> {
    std::iter::once(node_order(n, None)).chain((1..=SHUFFLED_ORDERS).map(|s| node_order(n, Some(s)))).collect()
}

/// Louvain candidates screened by subsystem observability on the nominal
/// trajectory window ending at `anchor`.
pub fn detect(g: &DirectedGraph, window: usize, anchor: usize) -> Result<DecompositionResult> {
    let end = window_end(anchor, window);
    let traj = nominal_trajectory(end.max(1))?;
    let aug = augment(cstr4_model::<f64>());
    let zs = augmented_scales();
    let ys = output_scales();
    decompose(g, &louvain_orders(g.len()), |specs| subsystem_observability_check(specs, &aug, &traj, end, window, Some((&zs, &ys))))
        .stage(Stage::Decomposition)
}

/// Names of the state and parameter members of each community.
pub fn memberships(g: &DirectedGraph, p: &Partition) -> Vec<Vec<String>> {
    p.groups()
        .iter()
        .map(|members| {
            let mut names: Vec<String> = members.iter().filter(|&&v| g.nodes[v].kind != NodeKind::Output).map(|&v| g.nodes[v].name.clone()).collect();
            names.sort();
            names
        })
        .collect()
}

/// Same communities regardless of labels and member order, outputs ignored.
pub fn same_membership(a: &[Vec<String>], b: &[Vec<String>]) -> bool {
    let norm = |x: &[Vec<String>]| {
        let mut v: Vec<Vec<String>> = x
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.sort();
                g
            })
            .filter(|g| !g.is_empty())
            .collect();
        v.sort();
        v
    };
    norm(a) == norm(b)
}
