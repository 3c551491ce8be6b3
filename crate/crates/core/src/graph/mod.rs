//! Directed variable graph, directed modularity and community-based
//! decomposition into subsystems.

mod louvain;
mod subsystem;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_len, NonlinearModel};
use crate::scalar::Real;

pub use louvain::{
    enumerate_partitions_bruteforce, louvain, louvain_candidates, louvain_traced, node_order, Candidate, LouvainTrace, MAX_BRUTEFORCE_NODES,
    TOP_CANDIDATES,
};
pub use subsystem::{decompose, extract_subsystems, subsystem_observability_check, DecompositionResult, ObservabilityVerdict, SubsystemSpec};

/// Entries of the normalized Jacobian at or below this magnitude are not edges.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    State,
    Parameter,
    Output,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::State => "state",
            NodeKind::Parameter => "parameter",
            NodeKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// State, parameter or output index in the model.
    pub index: usize,
    pub name: String,
}

/// Unweighted digraph; `adjacency[(i, j)] = 1` for an edge `j → i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    pub nodes: Vec<Node>,
    pub adjacency: DMatrix<f64>,
    pub edges: usize,
    pub in_degree: Vec<f64>,
    pub out_degree: Vec<f64>,
    /// States each input acts on directly, by model state index.
    pub input_targets: Vec<Vec<usize>>,
    pub input_names: Vec<String>,
}

impl DirectedGraph {
    /// Builds from an edge list `(src, dst)`; self-loops are dropped, repeats merged.
    pub fn from_edges(nodes: Vec<Node>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = nodes.len();
        let mut a = DMatrix::zeros(n, n);
        for &(src, dst) in edges {
            if src >= n || dst >= n {
                return Err(Error::InvalidArgument(format!("edge {src}→{dst} outside {n} nodes")));
            }
            if src != dst {
                a[(dst, src)] = 1.0;
            }
        }
        Ok(Self::from_adjacency(nodes, a))
    }

    fn from_adjacency(nodes: Vec<Node>, adjacency: DMatrix<f64>) -> Self {
        let n = nodes.len();
        let in_degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).sum()).collect();
        let out_degree: Vec<f64> = (0..n).map(|j| adjacency.column(j).sum()).collect();
        let edges = adjacency.iter().filter(|v| **v != 0.0).count();
        DirectedGraph { nodes, adjacency, edges, in_degree, out_degree, input_targets: Vec::new(), input_names: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.adjacency[(dst, src)] != 0.0
    }

    pub fn find(&self, kind: NodeKind, index: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == kind && n.index == index)
    }

    pub fn find_name(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Successors of `j`.
    pub fn out_neighbors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.adjacency[(i, j)] != 0.0)
    }

    /// Predecessors of `i`.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.adjacency[(i, j)] != 0.0)
    }

    /// `src,dst,src_kind,dst_kind`
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "src,dst,src_kind,dst_kind")?;
        for j in 0..self.len() {
            for i in self.out_neighbors(j) {
                let (s, d) = (&self.nodes[j], &self.nodes[i]);
                writeln!(w, "{},{},{},{}", s.name, d.name, s.kind.as_str(), d.kind.as_str())?;
            }
        }
        Ok(())
    }

    /// Row `i`, column `j` holds `A_ij`.
    pub fn write_adjacency<W: Write>(&self, mut w: W) -> Result<()> {
        let names: Vec<&str> = self.nodes.iter().map(|n| n.name.as_str()).collect();
        writeln!(w, ",{}", names.join(","))?;
        for (i, name) in names.iter().enumerate() {
            let row: Vec<String> = self.adjacency.row(i).iter().map(|v| format!("{}", *v as u8)).collect();
            writeln!(w, "{name},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Community label per node, labels contiguous from zero in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub community: Vec<usize>,
    pub count: usize,
}

impl Partition {
    /// Relabels arbitrary labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let community = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition { community, count: map.len() }
    }

    pub fn singletons(n: usize) -> Self {
        Partition { community: (0..n).collect(), count: n }
    }

    pub fn whole(n: usize) -> Self {
        Partition { community: vec![0; n], count: usize::from(n > 0) }
    }

    pub fn len(&self) -> usize {
        self.community.len()
    }

    pub fn is_empty(&self) -> bool {
        self.community.is_empty()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.community[i] == c).collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.count];
        for (i, &c) in self.community.iter().enumerate() {
            g[c].push(i);
        }
        g
    }
}

/// Sparsity-threshold options for [`build_graph`].
#[derive(Debug, Clone)]
pub struct GraphOptions<T: Real> {
    pub threshold: f64,
    /// Per augmented entry; `|value|` at the equilibrium (1 where zero) when absent.
    pub augmented_scales: Option<DVector<T>>,
    pub output_scales: Option<DVector<T>>,
}

impl<T: Real> Default for GraphOptions<T> {
    fn default() -> Self {
        GraphOptions { threshold: DEFAULT_EDGE_THRESHOLD, augmented_scales: None, output_scales: None }
    }
}

fn magnitude_scales<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let a = x.as_f64().abs();
            if a > 0.0 && a.is_finite() {
                a
            } else {
                1.0
            }
        })
        .collect()
}

/// Graph over the selected augmented entries plus every output.
///
/// Edge rules, on the coupling Jacobians at the equilibrium normalized by the
/// scales: `x_i → x_k` when `∂f_k/∂x_i ≠ 0` (`i ≠ k`), `θ_p → x_k` when
/// `∂f_k/∂θ_p ≠ 0`, and likewise into outputs through `∂h/∂x`, `∂h/∂θ`.
pub fn build_graph<T: Real, M: NonlinearModel<T> + ?Sized>(
    model: &M,
    selected: &[usize],
    x: &DVector<T>,
    u: &DVector<T>,
    theta: &DVector<T>,
    opts: &GraphOptions<T>,
) -> Result<DirectedGraph> {
    let d = model.dims();
    check_len("equilibrium state", x, d.states)?;
    check_len("equilibrium input", u, d.inputs)?;
    check_len("equilibrium parameters", theta, d.params)?;
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    sel.dedup();
    if sel.len() != selected.len() {
        return Err(Error::InvalidArgument("selected indices repeat".into()));
    }
    if let Some(&bad) = sel.iter().find(|&&j| j >= d.augmented()) {
        return Err(Error::InvalidArgument(format!("selected index {bad} outside {} augmented entries", d.augmented())));
    }
    let (tj, oj) = model.coupling_jacobians(x, u, theta)?;

    let zs: Vec<f64> = match &opts.augmented_scales {
        Some(s) => {
            check_len("augmented scales", s, d.augmented())?;
            s.iter().map(|v| v.as_f64()).collect()
        }
        None => {
            let mut z: Vec<T> = x.iter().copied().collect();
            z.extend(theta.iter().copied());
            magnitude_scales(&z)
        }
    };
    let ys: Vec<f64> = match &opts.output_scales {
        Some(s) => {
            check_len("output scales", s, d.outputs)?;
            s.iter().map(|v| v.as_f64()).collect()
        }
        None => magnitude_scales(model.output(x, theta)?.as_slice()),
    };

    let names = model.augmented_names();
    let out_names = model.output_names();
    let mut nodes: Vec<Node> = sel
        .iter()
        .map(|&j| {
            if j < d.states {
                Node { kind: NodeKind::State, index: j, name: names[j].clone() }
            } else {
                Node { kind: NodeKind::Parameter, index: j - d.states, name: names[j].clone() }
            }
        })
        .collect();
    nodes.extend((0..d.outputs).map(|k| Node { kind: NodeKind::Output, index: k, name: out_names[k].clone() }));

    let thr = opts.threshold;
    let n = nodes.len();
    let mut a = DMatrix::zeros(n, n);
    for (src, sn) in nodes.iter().enumerate() {
        if sn.kind == NodeKind::Output {
            continue;
        }
        let z = if sn.kind == NodeKind::State { sn.index } else { d.states + sn.index };
        for (dst, dn) in nodes.iter().enumerate() {
            if src == dst {
                continue;
            }
            let v = match (sn.kind, dn.kind) {
                (NodeKind::State, NodeKind::State) => tj.fx[(dn.index, sn.index)].as_f64() * zs[z] / zs[dn.index],
                (NodeKind::Parameter, NodeKind::State) => tj.ftheta[(dn.index, sn.index)].as_f64() * zs[z] / zs[dn.index],
                (NodeKind::State, NodeKind::Output) => oj.hx[(dn.index, sn.index)].as_f64() * zs[z] / ys[dn.index],
                (NodeKind::Parameter, NodeKind::Output) => oj.htheta[(dn.index, sn.index)].as_f64() * zs[z] / ys[dn.index],
                _ => 0.0,
            };
            if v.abs() > thr {
                a[(dst, src)] = 1.0;
            }
        }
    }
    let mut g = DirectedGraph::from_adjacency(nodes, a);
    g.input_targets = (0..d.inputs)
        .map(|k| {
            (0..d.states)
                .filter(|&i| {
                    let us = magnitude_scales(&[u[k]])[0];
                    (tj.fu[(i, k)].as_f64() * us / zs[i]).abs() > thr
                })
                .collect()
        })
        .collect();
    g.input_names = model.input_names();
    Ok(g)
}

/// `Ω = (1/m)·Σ_ij (A_ij − k_i^in·k_j^out/m)·δ(c_i, c_j)`
pub fn modularity(g: &DirectedGraph, p: &Partition) -> Result<f64> {
    if p.len() != g.len() {
        return Err(Error::Dimension(format!("partition of {} nodes for a graph of {}", p.len(), g.len())));
    }
    weighted_modularity(&g.adjacency, &p.community, p.count)
}

/// [`modularity`] on a weighted adjacency, self-loops included.
pub(crate) fn weighted_modularity(a: &DMatrix<f64>, community: &[usize], count: usize) -> Result<f64> {
    let m: f64 = a.sum();
    if m <= 0.0 {
        return Err(Error::EmptyGraph);
    }
    let n = a.nrows();
    let mut internal = vec![0.0; count];
    let mut kin = vec![0.0; count];
    let mut kout = vec![0.0; count];
    for i in 0..n {
        for j in 0..n {
            let w = a[(i, j)];
            if w != 0.0 {
                kin[community[i]] += w;
                kout[community[j]] += w;
                if community[i] == community[j] {
                    internal[community[i]] += w;
                }
            }
        }
    }
    Ok((0..count).map(|c| internal[c] / m - kin[c] * kout[c] / (m * m)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;
    use approx::assert_relative_eq;

    pub(super) fn plain_nodes(n: usize) -> Vec<Node> {
        (0..n).map(|i| Node { kind: NodeKind::State, index: i, name: format!("n{i}") }).collect()
    }

    #[test]
    fn degrees_and_edge_count() {
        let g = DirectedGraph::from_edges(plain_nodes(3), &[(0, 1), (1, 2), (0, 2), (2, 2)]).unwrap();
        assert_eq!(g.edges, 3);
        assert_eq!(g.in_degree, vec![0.0, 1.0, 2.0]);
        assert_eq!(g.out_degree, vec![2.0, 1.0, 0.0]);
        assert!(g.has_edge(0, 1) && !g.has_edge(1, 0));
    }

    #[test]
    fn whole_partition_has_zero_modularity() {
        let g = DirectedGraph::from_edges(plain_nodes(4), &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        assert_relative_eq!(modularity(&g, &Partition::whole(4)).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn singleton_partition_formula() {
        let g = DirectedGraph::from_edges(plain_nodes(4), &[(0, 1), (1, 0), (1, 2), (2, 3), (3, 1)]).unwrap();
        let m = g.edges as f64;
        let expected = -(0..4).map(|i| g.in_degree[i] * g.out_degree[i]).sum::<f64>() / (m * m);
        assert_relative_eq!(modularity(&g, &Partition::singletons(4)).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn edgeless_graph_has_no_modularity() {
        let g = DirectedGraph::from_edges(plain_nodes(2), &[]).unwrap();
        assert!(matches!(modularity(&g, &Partition::whole(2)), Err(Error::EmptyGraph)));
    }

    #[test]
    fn partition_relabels_by_first_appearance() {
        let p = Partition::from_labels(&[7, 3, 7, 9]);
        assert_eq!(p.community, vec![0, 1, 0, 2]);
        assert_eq!(p.count, 3);
        assert_eq!(p.groups(), vec![vec![0, 2], vec![1], vec![3]]);
    }

    #[test]
    fn diagonal_dynamics_have_only_output_edges() {
        let model =
            LinearModel::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 0.7, 0.9])), DMatrix::zeros(3, 0), DMatrix::identity(3, 3))
                .unwrap();
        let x = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let g = build_graph(&model, &[0, 1, 2], &x, &DVector::zeros(0), &DVector::zeros(0), &GraphOptions::default()).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.edges, 3);
        for k in 0..3 {
            let out = g.find(NodeKind::Output, k).unwrap();
            assert_eq!(g.in_neighbors(out).collect::<Vec<_>>(), vec![g.find(NodeKind::State, k).unwrap()]);
        }
    }

    #[test]
    fn parameter_edges_and_exports() {
        // x1⁺ = 0.5 x1 + 0.2 x2 + θ, x2⁺ = 0.5 x2, y = x1
        let model = LinearModel::with_params(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let u = DVector::from_column_slice(&[1.0]);
        let th = DVector::from_column_slice(&[0.5]);
        let g = build_graph(&model, &[0, 1, 2], &x, &u, &th, &GraphOptions::default()).unwrap();
        // x2→x1, θ→x1, x1→y
        assert_eq!(g.edges, 3);
        assert_eq!(g.input_targets, vec![vec![1]]);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("x_2,x_1,state,state"));
        assert!(text.contains("theta_1,x_1,parameter,state"));
        assert!(text.contains("x_1,y_1,state,output"));
        let mut buf = Vec::new();
        g.write_adjacency(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(",x_1,x_2,theta_1,y_1\nx_1,0,1,1,0\n"));
    }
}
