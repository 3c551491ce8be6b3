//! Fast unfolding for directed modularity, plus an exhaustive oracle for small graphs.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{weighted_modularity, DirectedGraph, Partition};
use crate::error::{Error, Result};

pub const MAX_BRUTEFORCE_NODES: usize = 12;

/// Distinct partitions retained for fallback.
pub const TOP_CANDIDATES: usize = 5;

/// Moves must beat staying put by more than this.
const GAIN_TOL: f64 = 1e-12;

/// Ascending order, or a seeded shuffle of it.
pub fn node_order(n: usize, seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(s) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub partition: Partition,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainTrace {
    pub partition: Partition,
    pub omega: f64,
    /// Modularity increase of every local move, in order.
    pub move_gains: Vec<f64>,
    /// Flat partition after each local-move pass.
    pub snapshots: Vec<Partition>,
    /// Flat partition at each aggregation.
    pub levels: Vec<Partition>,
    /// Modularity of the graph aggregated from the matching `levels` entry,
    /// under its identity partition.
    pub aggregated_omegas: Vec<f64>,
}

pub fn louvain(g: &DirectedGraph, order: &[usize]) -> Result<Partition> {
    Ok(louvain_traced(g, order)?.partition)
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::InvalidArgument(format!("node order has {} entries for {n} nodes", order.len())));
    }
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument("node order is not a permutation".into()));
        }
    }
    Ok(())
}

/// One local-move phase on a weighted graph. Returns whether any node moved.
fn local_moves(w: &DMatrix<f64>, m: f64, order: &[usize], comm: &mut [usize], gains: &mut Vec<f64>, mut after_pass: impl FnMut(&[usize])) -> bool {
    let n = w.nrows();
    let kin: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let kout: Vec<f64> = (0..n).map(|j| w.column(j).sum()).collect();
    let mut cin = vec![0.0; n];
    let mut cout = vec![0.0; n];
    for i in 0..n {
        cin[comm[i]] += kin[i];
        cout[comm[i]] += kout[i];
    }
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut any = false;
    loop {
        let mut moved = false;
        for &i in order {
            let c0 = comm[i];
            cin[c0] -= kin[i];
            cout[c0] -= kout[i];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let wij = w[(i, j)] + w[(j, i)];
                if wij != 0.0 {
                    let c = comm[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += wij;
                }
            }
            if link[c0] == 0.0 && !touched.contains(&c0) {
                touched.push(c0);
            }
            touched.sort_unstable();
            let gain = |c: usize, link: &[f64]| link[c] / m - (kin[i] * cout[c] + kout[i] * cin[c]) / (m * m);
            let stay = gain(c0, &link);
            let (mut best, mut best_gain) = (c0, stay);
            for &c in &touched {
                if c == c0 {
                    continue;
                }
                let gc = gain(c, &link);
                if gc > best_gain + GAIN_TOL {
                    best = c;
                    best_gain = gc;
                }
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            touched.clear();
            comm[i] = best;
            cin[best] += kin[i];
            cout[best] += kout[i];
            if best != c0 {
                gains.push(best_gain - stay);
                moved = true;
            }
        }
        after_pass(comm);
        if !moved {
            return any;
        }
        any = true;
    }
}

fn relabel(comm: &[usize]) -> (Vec<usize>, usize) {
    let p = Partition::from_labels(comm);
    (p.community, p.count)
}

fn aggregate(w: &DMatrix<f64>, comm: &[usize], count: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(count, count);
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let v = w[(i, j)];
            if v != 0.0 {
                out[(comm[i], comm[j])] += v;
            }
        }
    }
    out
}

/// Two-phase fast unfolding: best-gain local moves, then aggregation of
/// communities into super-nodes (self-loops kept), until nothing moves.
pub fn louvain_traced(g: &DirectedGraph, order: &[usize]) -> Result<LouvainTrace> {
    let n = g.len();
    check_permutation(order, n)?;
    let m = g.adjacency.sum();
    if m <= 0.0 {
        let partition = Partition::singletons(n);
        return Ok(LouvainTrace {
            levels: vec![partition.clone()],
            snapshots: vec![partition.clone()],
            partition,
            omega: 0.0,
            move_gains: Vec::new(),
            aggregated_omegas: Vec::new(),
        });
    }
    let mut flat: Vec<usize> = (0..n).collect();
    let mut move_gains = Vec::new();
    let mut snapshots = Vec::new();
    let mut levels = Vec::new();
    let mut aggregated_omegas = Vec::new();
    let mut first_round = true;
    loop {
        // hierarchy of local moves and aggregation, starting from `flat`
        let (labels, count) = relabel(&flat);
        flat = labels;
        let mut w = if first_round { g.adjacency.clone() } else { aggregate(&g.adjacency, &flat, count) };
        let mut level_order = if first_round { order.to_vec() } else { (0..count).collect() };
        loop {
            let mut comm: Vec<usize> = (0..w.nrows()).collect();
            let moved = local_moves(&w, m, &level_order, &mut comm, &mut move_gains, |c| {
                let f: Vec<usize> = flat.iter().map(|&s| c[s]).collect();
                snapshots.push(Partition::from_labels(&f));
            });
            let (labels, count) = relabel(&comm);
            for s in flat.iter_mut() {
                *s = labels[*s];
            }
            if !moved || count == w.nrows() {
                break;
            }
            w = aggregate(&w, &labels, count);
            levels.push(Partition::from_labels(&flat));
            aggregated_omegas.push(weighted_modularity(&w, &(0..count).collect::<Vec<_>>(), count)?);
            level_order = (0..count).collect();
        }
        first_round = false;
        // refinement: single original nodes may still gain by moving
        let moved = local_moves(&g.adjacency, m, order, &mut flat, &mut move_gains, |c| snapshots.push(Partition::from_labels(c)));
        if !moved {
            break;
        }
    }
    let partition = Partition::from_labels(&flat);
    let omega = weighted_modularity(&g.adjacency, &partition.community, partition.count)?;
    Ok(LouvainTrace { partition, omega, move_gains, snapshots, levels, aggregated_omegas })
}

/// Runs every order (concurrently) and keeps the best distinct partitions
/// encountered, highest Ω first, ties broken by order of discovery.
pub fn louvain_candidates(g: &DirectedGraph, orders: &[Vec<usize>]) -> Result<Vec<Candidate>> {
    let traces: Vec<LouvainTrace> = orders.par_iter().map(|o| louvain_traced(g, o)).collect::<Result<_>>()?;
    let mut seen: Vec<Candidate> = Vec::new();
    for t in &traces {
        for p in std::iter::once(&t.partition).chain(&t.snapshots).chain(&t.levels) {
            if seen.iter().any(|c| &c.partition == p) {
                continue;
            }
            let omega = if g.edges == 0 { 0.0 } else { weighted_modularity(&g.adjacency, &p.community, p.count)? };
            seen.push(Candidate { partition: p.clone(), omega });
        }
    }
    seen.sort_by(|a, b| b.omega.total_cmp(&a.omega));
    seen.truncate(TOP_CANDIDATES);
    Ok(seen)
}

/// Exact maximizer of Ω over all set partitions (restricted growth strings).
pub fn enumerate_partitions_bruteforce(g: &DirectedGraph) -> Result<Candidate> {
    let n = g.len();
    if n > MAX_BRUTEFORCE_NODES {
        return Err(Error::InvalidArgument(format!("exhaustive search refused for {n} > {MAX_BRUTEFORCE_NODES} nodes")));
    }
    if g.adjacency.sum() <= 0.0 {
        return Err(Error::EmptyGraph);
    }
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut rgs = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    let mut best = Candidate { partition: Partition::whole(n), omega: f64::NEG_INFINITY };
    loop {
        let count = maxes[n - 1] + 1;
        let omega = weighted_modularity(&g.adjacency, &rgs, count)?;
        if omega > best.omega {
            best = Candidate { partition: Partition { community: rgs.clone(), count }, omega };
        }
        // next restricted growth string
        let mut k = n - 1;
        loop {
            if k == 0 {
                return Ok(best);
            }
            let bound = maxes[k - 1] + 1;
            if rgs[k] < bound {
                rgs[k] += 1;
                maxes[k] = maxes[k - 1].max(rgs[k]);
                for j in k + 1..n {
                    rgs[j] = 0;
                    maxes[j] = maxes[k];
                }
                break;
            }
            k -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::modularity;
    use super::super::tests::plain_nodes;
    use super::*;
    use approx::assert_relative_eq;

    fn triangles() -> DirectedGraph {
        DirectedGraph::from_edges(plain_nodes(6), &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap()
    }

    #[test]
    fn disconnected_triangles_split_in_two() {
        let g = triangles();
        let t = louvain_traced(&g, &node_order(6, None)).unwrap();
        assert_eq!(t.partition.count, 2);
        assert_eq!(t.partition.community, vec![0, 0, 0, 1, 1, 1]);
        let oracle = enumerate_partitions_bruteforce(&g).unwrap();
        assert_relative_eq!(t.omega, oracle.omega, epsilon = 1e-12);
        assert_relative_eq!(t.omega, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_node_is_one_community() {
        let g = DirectedGraph::from_edges(plain_nodes(1), &[]).unwrap();
        assert_eq!(louvain(&g, &[0]).unwrap().count, 1);
    }

    #[test]
    fn two_nodes_one_edge() {
        let g = DirectedGraph::from_edges(plain_nodes(2), &[(0, 1)]).unwrap();
        let best = enumerate_partitions_bruteforce(&g).unwrap();
        assert_eq!(best.partition.count, 1);
        assert_eq!(best.omega, 0.0);
        assert!(modularity(&g, &Partition::singletons(2)).unwrap() <= 0.0);
    }

    #[test]
    fn moves_increase_modularity_and_aggregation_preserves_it() {
        let g = DirectedGraph::from_edges(plain_nodes(8), &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3), (5, 6), (6, 7), (7, 6), (1, 0)])
            .unwrap();
        let t = louvain_traced(&g, &node_order(8, Some(3))).unwrap();
        assert!(t.move_gains.iter().all(|d| *d > 0.0));
        for (level, agg) in t.levels.iter().zip(&t.aggregated_omegas) {
            assert_relative_eq!(modularity(&g, level).unwrap(), *agg, epsilon = 1e-12);
        }
        assert_relative_eq!(modularity(&g, &t.partition).unwrap(), t.omega, epsilon = 1e-12);
        assert!(t.omega >= modularity(&g, &Partition::singletons(8)).unwrap());
    }

    #[test]
    fn bad_orders_rejected() {
        let g = triangles();
        assert!(louvain(&g, &[0, 1, 2]).is_err());
        assert!(louvain(&g, &[0, 0, 1, 2, 3, 4]).is_err());
    }

    #[test]
    fn candidates_are_distinct_and_sorted() {
        let g = triangles();
        let orders: Vec<Vec<usize>> = (0..4).map(|s| node_order(6, Some(s))).collect();
        let c = louvain_candidates(&g, &orders).unwrap();
        assert!(c.len() <= TOP_CANDIDATES);
        assert!(c.windows(2).all(|w| w[0].omega >= w[1].omega && w[0].partition != w[1].partition));
        assert_relative_eq!(c[0].omega, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn oversized_bruteforce_refused() {
        let g = DirectedGraph::from_edges(plain_nodes(13), &[(0, 1)]).unwrap();
        assert!(enumerate_partitions_bruteforce(&g).is_err());
    }
}
