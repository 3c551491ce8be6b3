//! Subsystems from communities, their observability screen, and the
//! decomposition driver with fallback to lower-modularity candidates.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::{louvain_candidates, modularity, Candidate, DirectedGraph, NodeKind, Partition};
use crate::error::{Error, Result};
use crate::model::{AugmentedModel, NonlinearModel, Trajectory};
use crate::scalar::Real;
use crate::sensitivity::{rank_and_condition, stacked_products, window_linearizations};

/// One subsystem; all indices refer to the full model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsystemSpec {
    pub id: usize,
    pub states: Vec<usize>,
    pub params: Vec<usize>,
    pub outputs: Vec<usize>,
    pub inputs: Vec<usize>,
    /// States of other subsystems acting directly on a local state.
    pub interactions: Vec<usize>,
    pub neighbors: Vec<usize>,
}

impl SubsystemSpec {
    /// Local augmented indices: states, then `n_x + p` for each parameter.
    pub fn augmented(&self, n_states: usize) -> Vec<usize> {
        self.states.iter().copied().chain(self.params.iter().map(|p| n_states + p)).collect()
    }
}

/// Splits the graph's nodes by community.
///
/// Inputs go to every subsystem holding a state they act on directly.
pub fn extract_subsystems(g: &DirectedGraph, p: &Partition) -> Result<Vec<SubsystemSpec>> {
    if p.len() != g.len() {
        return Err(Error::Dimension(format!("partition of {} nodes for a graph of {}", p.len(), g.len())));
    }
    let mut specs: Vec<SubsystemSpec> = (0..p.count)
        .map(|id| SubsystemSpec {
            id,
            states: Vec::new(),
            params: Vec::new(),
            outputs: Vec::new(),
            inputs: Vec::new(),
            interactions: Vec::new(),
            neighbors: Vec::new(),
        })
        .collect();
    let mut owner_of_state = std::collections::HashMap::new();
    for (v, node) in g.nodes.iter().enumerate() {
        let s = &mut specs[p.community[v]];
        match node.kind {
            NodeKind::State => {
                s.states.push(node.index);
                owner_of_state.insert(node.index, s.id);
            }
            NodeKind::Parameter => s.params.push(node.index),
            NodeKind::Output => s.outputs.push(node.index),
        }
    }
    for s in &specs {
        if s.states.is_empty() {
            let members: Vec<&str> = p.members(s.id).iter().map(|&v| g.nodes[v].name.as_str()).collect();
            return Err(Error::Unestimable(format!("community {{{}}} holds no state", members.join(", "))));
        }
    }
    for v in 0..g.len() {
        if g.nodes[v].kind != NodeKind::State {
            continue;
        }
        let c = p.community[v];
        for src in g.in_neighbors(v) {
            let sn = &g.nodes[src];
            if sn.kind == NodeKind::State && p.community[src] != c && !specs[c].interactions.contains(&sn.index) {
                specs[c].interactions.push(sn.index);
            }
        }
    }
    for (k, targets) in g.input_targets.iter().enumerate() {
        for t in targets {
            if let Some(&c) = owner_of_state.get(t) {
                if !specs[c].inputs.contains(&k) {
                    specs[c].inputs.push(k);
                }
            }
        }
    }
    for s in specs.iter_mut() {
        s.states.sort_unstable();
        s.params.sort_unstable();
        s.outputs.sort_unstable();
        s.inputs.sort_unstable();
        s.interactions.sort_unstable();
        let mut nb: Vec<usize> = s.interactions.iter().map(|x| owner_of_state[x]).collect();
        nb.sort_unstable();
        nb.dedup();
        s.neighbors = nb;
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityVerdict {
    pub subsystem: usize,
    pub rank: usize,
    pub columns: usize,
    pub condition: f64,
    pub passed: bool,
}

/// Rank test of each subsystem's windowed observability matrix, the neighbours'
/// states being treated as known signals: local rows of `C_θ`, local block of `A_θ`.
///
/// `scales` (augmented, outputs) normalize the matrix as in the global test.
pub fn subsystem_observability_check<T: Real, M: NonlinearModel<T>>(
    specs: &[SubsystemSpec],
    aug: &AugmentedModel<T, M>,
    traj: &Trajectory<T>,
    t: usize,
    window: usize,
    scales: Option<(&DVector<T>, &DVector<T>)>,
) -> Result<Vec<ObservabilityVerdict>> {
    let (a, c) = window_linearizations(aug, traj, t, window)?;
    let nx = aug.dims().states;
    specs
        .iter()
        .map(|s| {
            let cols = s.augmented(nx);
            if s.outputs.is_empty() {
                return Ok(ObservabilityVerdict { subsystem: s.id, rank: 0, columns: cols.len(), condition: f64::INFINITY, passed: false });
            }
            let la: Vec<DMatrix<T>> = a.iter().map(|m| m.select_rows(&cols).select_columns(&cols)).collect();
            let lc: Vec<DMatrix<T>> = c.iter().map(|m| m.select_rows(&s.outputs).select_columns(&cols)).collect();
            let mut o = stacked_products(&la, &lc)?;
            if let Some((zs, ys)) = scales {
                let ny = s.outputs.len();
                for (jj, &j) in cols.iter().enumerate() {
                    for i in 0..o.nrows() {
                        o[(i, jj)] *= zs[j] / ys[s.outputs[i % ny]];
                    }
                }
            }
            let r = rank_and_condition(&o, None)?;
            Ok(ObservabilityVerdict { subsystem: s.id, rank: r.rank, columns: cols.len(), condition: r.condition, passed: r.full_rank })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub partition: Partition,
    pub omega: f64,
    pub subsystems: Vec<SubsystemSpec>,
    pub verdicts: Vec<ObservabilityVerdict>,
    /// Position of the adopted partition among the candidates (0 = best Ω).
    pub fallback_rank: usize,
    pub candidates: Vec<Candidate>,
}

impl DecompositionResult {
    /// Fixed partition, no search.
    pub fn from_partition(g: &DirectedGraph, partition: Partition, verdicts: Vec<ObservabilityVerdict>) -> Result<Self> {
        let omega = modularity(g, &partition)?;
        let subsystems = extract_subsystems(g, &partition)?;
        Ok(DecompositionResult {
            candidates: vec![Candidate { partition: partition.clone(), omega }],
            partition,
            omega,
            subsystems,
            verdicts,
            fallback_rank: 0,
        })
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn to_json(&self, g: &DirectedGraph) -> Value {
        let members = |p: &Partition, c: usize| -> Vec<String> { p.members(c).iter().map(|&v| g.nodes[v].name.clone()).collect() };
        let state_name = |i: &usize| g.find(NodeKind::State, *i).map(|v| g.nodes[v].name.clone()).unwrap_or_else(|| i.to_string());
        let subsystems: Vec<Value> = self
            .subsystems
            .iter()
            .map(|s| {
                let verdict = self.verdicts.iter().find(|v| v.subsystem == s.id);
                json!({
                    "id": s.id + 1,
                    "members": members(&self.partition, s.id),
                    "states": s.states,
                    "parameters": s.params,
                    "outputs": s.outputs,
                    "inputs": s.inputs.iter().map(|k| g.input_names.get(*k).cloned().unwrap_or_else(|| k.to_string())).collect::<Vec<_>>(),
                    "interactions": s.interactions.iter().map(state_name).collect::<Vec<_>>(),
                    "neighbors": s.neighbors.iter().map(|n| n + 1).collect::<Vec<_>>(),
                    "observable": verdict.map(|v| v.passed),
                    "rank": verdict.map(|v| v.rank),
                    "condition": verdict.map(|v| v.condition).filter(|c| c.is_finite()),
                })
            })
            .collect();
        let candidates: Vec<Value> = self
            .candidates
            .iter()
            .map(|c| json!({"omega": c.omega, "communities": (0..c.partition.count).map(|k| members(&c.partition, k)).collect::<Vec<_>>()}))
            .collect();
        json!({
            "omega": self.omega,
            "fallback_rank": self.fallback_rank,
            "all_observable": self.all_passed(),
            "subsystems": subsystems,
            "candidates": candidates,
        })
    }
}

/// Louvain over `orders`, then the first candidate (by Ω) whose subsystems all
/// pass `check`. When none pass, the best-Ω candidate is returned with its
/// failing verdicts.
pub fn decompose<F>(g: &DirectedGraph, orders: &[Vec<usize>], check: F) -> Result<DecompositionResult>
where
    F: Fn(&[SubsystemSpec]) -> Result<Vec<ObservabilityVerdict>>,
{
    let candidates = louvain_candidates(g, orders)?;
    let mut first: Option<DecompositionResult> = None;
    for (rank, cand) in candidates.iter().enumerate() {
        let subsystems = match extract_subsystems(g, &cand.partition) {
            Ok(s) => s,
            Err(Error::Unestimable(_)) => continue,
            Err(e) => return Err(e),
        };
        let verdicts = check(&subsystems)?;
        let result = DecompositionResult {
            partition: cand.partition.clone(),
            omega: cand.omega,
            subsystems,
            verdicts,
            fallback_rank: rank,
            candidates: candidates.clone(),
        };
        if result.all_passed() {
            return Ok(result);
        }
        first.get_or_insert(result);
    }
    first.ok_or_else(|| Error::Unestimable("no candidate partition gives every subsystem a state".into()))
}
