//! Graph data model, dataset ingestion and train/test splits.

mod convert;
mod io;
mod split;

pub use convert::{convert_edge_list, convert_npz, EdgeListSource};
pub use io::{find_dataset, load_dataset, load_dataset_dir, save_dataset, DatasetMeta, DATA_ENV};
pub use split::{make_fewshot_split, make_split, DataSplit};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Read-only adjacency access shared by full graphs and structure-only views.
pub trait Topology {
    fn num_nodes(&self) -> usize;
    fn neighbors(&self, node: usize) -> &[u32];

    fn degree(&self, node: usize) -> usize {
        self.neighbors(node).len()
    }
}

/// Immutable undirected graph in CSR form with optional node attributes and labels.
///
/// Every undirected edge is stored in both directions, neighbor lists are
/// sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    attributes: Option<Array2<f64>>,
    labels: Option<Vec<u32>>,
    num_classes: usize,
}

impl Graph {
    /// Build a graph from an undirected edge list.
    ///
    /// Edges are symmetrized and deduplicated. Self-loops are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            col_idx.extend_from_slice(list);
            row_ptr.push(col_idx.len());
        }
        Ok(Graph {
            num_nodes,
            row_ptr,
            col_idx,
            attributes: None,
            labels: None,
            num_classes: 0,
        })
    }

    pub fn with_attributes(mut self, attributes: Array2<f64>) -> Result<Self> {
        if attributes.nrows() != self.num_nodes {
            return Err(Error::Data(format!(
                "attribute matrix has {} rows, graph has {} nodes",
                attributes.nrows(),
                self.num_nodes
            )));
        }
        if attributes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("attribute matrix contains non-finite values".into()));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    /// Attach class labels; every label must be below `num_classes`.
    pub fn with_labels(mut self, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Data(format!(
                "label vector has length {}, graph has {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= num_classes) {
            return Err(Error::Data(format!(
                "label out of range: node {i} has label {y} but num_classes = {num_classes}"
            )));
        }
        self.labels = Some(labels);
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn without_attributes(mut self) -> Self {
        self.attributes = None;
        self
    }

    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn attributes(&self) -> Option<&Array2<f64>> {
        self.attributes.as_ref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Sorted `(u, v)` pairs with `u < v`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if (u as u32) < v {
                    out.push((u, v as usize));
                }
            }
        }
        out
    }

    /// A view exposing adjacency only; attributes are unreachable through it.
    pub fn structure(&self) -> StructuralGraph<'_> {
        StructuralGraph { inner: self }
    }
}

impl Topology for Graph {
    fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    fn neighbors(&self, node: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[node]..self.row_ptr[node + 1]]
    }
}

/// Structure-only borrow of a [`Graph`], used by pre-training.
#[derive(Debug, Clone, Copy)]
pub struct StructuralGraph<'a> {
    inner: &'a Graph,
}

impl StructuralGraph<'_> {
    pub fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }
}

impl Topology for StructuralGraph<'_> {
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes
    }

    fn neighbors(&self, node: usize) -> &[u32] {
        self.inner.neighbors(node)
    }
}

/// A validated dataset together with its name.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub name: String,
}

impl DatasetBundle {
    pub fn new(graph: Graph, name: impl Into<String>) -> Self {
        DatasetBundle {
            graph,
            name: name.into(),
        }
    }

    pub fn is_attributed(&self) -> bool {
        self.graph.attributes.is_some()
    }
}
