//! Random walk with restart (RWR) subgraph extraction.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Topology};
use crate::rng::{derive_seed, Rng64};

pub const DEFAULT_WALK_STEPS: usize = 256;
pub const DEFAULT_RESTART_RATE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub walk_steps: usize,
    pub restart_rate: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            walk_steps: DEFAULT_WALK_STEPS,
            restart_rate: DEFAULT_RESTART_RATE,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.walk_steps == 0 {
            problems.push("walk_steps must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.restart_rate) {
            problems.push(format!("restart_rate must lie in [0, 1], got {}", self.restart_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Simulate `walk_steps` steps of a random walk with restart from `center` and
/// return the sorted set of visited nodes (center included).
///
/// Each step draws one uniform variate for the restart decision and, when the
/// walk moves, one uniform neighbor index. A node without neighbors forces a
/// jump back to the center.
pub fn rwr_sample(
    graph: &impl Topology,
    center: usize,
    walk_steps: usize,
    restart_rate: f64,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    let n = graph.num_nodes();
    if center >= n {
        return Err(Error::Data(format!("center {center} out of range (num_nodes = {n})")));
    }
    SamplerParams {
        walk_steps,
        restart_rate,
    }
    .validate()?;

    let mut rng = Rng64::seed_from_u64(rng_seed);
    let mut visited = vec![center];
    let mut current = center;
    for _ in 0..walk_steps {
        let restart = rng.random::<f64>() < restart_rate;
        let neighbors = graph.neighbors(current);
        current = if restart || neighbors.is_empty() {
            center
        } else {
            neighbors[rng.random_range(0..neighbors.len())] as usize
        };
        visited.push(current);
    }
    visited.sort_unstable();
    visited.dedup();
    Ok(visited)
}

/// Node-induced subgraph around a center node.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub center_local_id: usize,
    /// Global ids in ascending order; position is the local id.
    pub node_ids: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    pub local_attributes: Option<Array2<f64>>,
    pub label: Option<u32>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn center(&self) -> usize {
        self.node_ids[self.center_local_id]
    }

    /// Local `(u, v)` pairs with `u < v`.
    pub fn local_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.len() {
            for &v in self.neighbors(u) {
                if (u as u32) < v {
                    out.push((u, v as usize));
                }
            }
        }
        out
    }

    /// Local CSR arrays `(row_ptr, col_idx)`.
    pub fn csr(&self) -> (&[usize], &[u32]) {
        (&self.row_ptr, &self.col_idx)
    }

    /// Relabel local nodes: new local id of old node `i` is `perm[i]`.
    /// Used to check permutation equivariance; ids stay attached to nodes.
    pub fn permuted(&self, perm: &[usize]) -> Subgraph {
        let n = self.len();
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for &old in &inv {
            let mut row: Vec<u32> = self.neighbors(old).iter().map(|&u| perm[u as usize] as u32).collect();
            row.sort_unstable();
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        Subgraph {
            center_local_id: perm[self.center_local_id],
            node_ids: inv.iter().map(|&o| self.node_ids[o]).collect(),
            row_ptr,
            col_idx,
            local_attributes: self
                .local_attributes
                .as_ref()
                .map(|x| x.select(ndarray::Axis(0), &inv)),
            label: self.label,
        }
    }
}

impl Subgraph {
    /// Copy with each undirected edge removed independently with probability `p`.
    pub fn drop_edges(&self, p: f64, rng: &mut impl Rng) -> Subgraph {
        let mut keep = vec![Vec::new(); self.len()];
        for (u, v) in self.local_edges() {
            if !rng.random_bool(p) {
                keep[u].push(v as u32);
                keep[v].push(u as u32);
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for mut row in keep {
            row.sort_unstable();
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        Subgraph {
            row_ptr,
            col_idx,
            ..self.clone()
        }
    }
}

impl Topology for Subgraph {
    fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    fn neighbors(&self, node: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[node]..self.row_ptr[node + 1]]
    }
}

/// Induce the subgraph on `nodes`; local ids follow ascending global id.
pub fn induce_subgraph(graph: &Graph, nodes: &[usize], center: usize) -> Result<Subgraph> {
    induce(graph, nodes, center, graph.attributes(), graph.labels())
}

/// Induce on adjacency alone; attributes and labels are never gathered.
pub fn induce_structure(graph: &impl Topology, nodes: &[usize], center: usize) -> Result<Subgraph> {
    induce(graph, nodes, center, None, None)
}

fn induce(
    graph: &impl Topology,
    nodes: &[usize],
    center: usize,
    attributes: Option<&Array2<f64>>,
    labels: Option<&[u32]>,
) -> Result<Subgraph> {
    let mut node_ids = nodes.to_vec();
    node_ids.sort_unstable();
    node_ids.dedup();
    let center_local_id = node_ids
        .binary_search(&center)
        .map_err(|_| Error::Data(format!("center {center} is not in the node set")))?;
    if let Some(&bad) = node_ids.last().filter(|&&v| v >= graph.num_nodes()) {
        return Err(Error::Data(format!("node {bad} out of range")));
    }

    let mut row_ptr = Vec::with_capacity(node_ids.len() + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for &g in &node_ids {
        for &nb in graph.neighbors(g) {
            if let Ok(local) = node_ids.binary_search(&(nb as usize)) {
                col_idx.push(local as u32);
            }
        }
        row_ptr.push(col_idx.len());
    }
    let local_attributes = attributes.map(|x| x.select(ndarray::Axis(0), &node_ids));
    let label = labels.map(|y| y[center]);
    Ok(Subgraph {
        center_local_id,
        node_ids,
        row_ptr,
        col_idx,
        local_attributes,
        label,
    })
}

/// Seed of the walk around `center` for a run-level seed.
pub fn center_seed(global_seed: u64, center: usize) -> u64 {
    derive_seed(global_seed, &[center as u64])
}

/// RWR sample around `center` followed by induction.
pub fn sample_subgraph(graph: &Graph, center: usize, params: SamplerParams, seed: u64) -> Result<Subgraph> {
    let nodes = rwr_sample(graph, center, params.walk_steps, params.restart_rate, seed)?;
    induce_subgraph(graph, &nodes, center)
}

/// Structure-only counterpart of [`sample_subgraph`].
pub fn sample_structure(graph: &impl Topology, center: usize, params: SamplerParams, seed: u64) -> Result<Subgraph> {
    let nodes = rwr_sample(graph, center, params.walk_steps, params.restart_rate, seed)?;
    induce_structure(graph, &nodes, center)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(leaves: usize) -> Graph {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Graph::from_edges(leaves + 1, &edges).unwrap()
    }

    #[test]
    fn full_restart_is_center_only() {
        let g = star(5);
        assert_eq!(rwr_sample(&g, 0, 50, 1.0, 3).unwrap(), vec![0]);
    }

    #[test]
    fn isolated_center() {
        let g = Graph::from_edges(3, &[(1, 2)]).unwrap();
        for seed in 0..5 {
            assert_eq!(rwr_sample(&g, 0, 100, 0.0, seed).unwrap(), vec![0]);
        }
    }

    #[test]
    fn errors() {
        let g = star(3);
        assert!(rwr_sample(&g, 9, 10, 0.5, 0).is_err());
        assert!(rwr_sample(&g, 0, 0, 0.5, 0).is_err());
        assert!(rwr_sample(&g, 0, 10, 1.5, 0).is_err());
        assert!(induce_subgraph(&g, &[1, 2], 0).is_err());
    }

    #[test]
    fn size_bound_and_determinism() {
        let g = star(300);
        let a = rwr_sample(&g, 0, 16, 0.1, 42).unwrap();
        assert!(a.len() <= 17);
        assert_eq!(a, rwr_sample(&g, 0, 16, 0.1, 42).unwrap());
    }

    #[test]
    fn singleton_subgraph() {
        let g = star(4);
        let s = induce_subgraph(&g, &[2], 2).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.local_edges().is_empty());
        assert_eq!(s.center(), 2);
    }

    #[test]
    fn full_induction_is_identity() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 1)]).unwrap();
        let s = induce_subgraph(&g, &[4, 3, 2, 1, 0], 3).unwrap();
        assert_eq!(s.local_edges(), g.edge_list());
        assert_eq!(s.center_local_id, 3);
    }
}
