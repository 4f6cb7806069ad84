//! Condition generation: attribute kernel, threshold discretization and the
//! spectral embedding of the resulting feature adjacency.

mod deepwalk;

pub use deepwalk::{deepwalk_embed, DeepWalkParams};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::spectral::{embed_adjacency, PositionalEmbedding};

/// Cosine-similarity kernel between attribute rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub matrix: Array2<f64>,
}

/// Binary symmetric adjacency obtained by thresholding a kernel, with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAdjacency {
    pub matrix: Array2<f64>,
}

impl FeatureAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of ones above the diagonal.
    pub fn num_edges(&self) -> usize {
        let n = self.num_nodes();
        (0..n)
            .map(|i| (i + 1..n).filter(|&j| self.matrix[(i, j)] != 0.0).count())
            .sum()
    }
}

/// Positional embedding of a condition matrix, tagged with the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub embedding: PositionalEmbedding,
    pub source_threshold: f64,
}

impl ConditionEmbedding {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.embedding.matrix
    }
}

/// `K_ij = x_i·x_j / (|x_i| |x_j|)`, with `K_ij = 0` whenever either row is all zeros.
pub fn cosine_kernel(attributes: ArrayView2<f64>) -> Result<KernelMatrix> {
    let (n, d) = attributes.dim();
    if n == 0 || d == 0 {
        return Err(Error::Shape(format!("attribute matrix must be non-empty, got {n}x{d}")));
    }
    if attributes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("attribute matrix contains non-finite values".into()));
    }
    let mut unit = attributes.to_owned();
    let mut nonzero = vec![false; n];
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
            nonzero[i] = true;
        }
    }
    let mut k = unit.dot(&unit.t());
    for i in 0..n {
        k[(i, i)] = if nonzero[i] { 1.0 } else { 0.0 };
        for j in i + 1..n {
            let v = k[(i, j)].clamp(-1.0, 1.0);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { matrix: k })
}

/// `A'_ij = 1` iff `K_ij > v`; the diagonal is then forced to one.
pub fn discretize(kernel: &KernelMatrix, v: f64) -> Result<FeatureAdjacency> {
    if !v.is_finite() {
        return Err(Error::config(format!("threshold must be finite, got {v}")));
    }
    let mut a = kernel.matrix.mapv(|k| if k > v { 1.0 } else { 0.0 });
    for i in 0..a.nrows() {
        a[(i, i)] = 1.0;
    }
    Ok(FeatureAdjacency { matrix: a })
}

/// Spectral embedding of a feature adjacency (self-loops count toward degree).
pub fn condition_embedding(adj: &FeatureAdjacency, k: usize, threshold: f64) -> Result<ConditionEmbedding> {
    Ok(ConditionEmbedding {
        embedding: embed_adjacency(adj.matrix.view(), k)?,
        source_threshold: threshold,
    })
}

/// Soft-condition variant: the kernel itself, negative entries zeroed, used as
/// a weighted adjacency.
pub fn soft_condition_embedding(kernel: &KernelMatrix, k: usize) -> Result<ConditionEmbedding> {
    let mut w = kernel.matrix.mapv(|x| x.clamp(0.0, 1.0));
    // All-zero attribute rows would otherwise be isolated with a zero degree.
    for i in 0..w.nrows() {
        w[(i, i)] = 1.0;
    }
    Ok(ConditionEmbedding {
        embedding: embed_adjacency(w.view(), k)?,
        source_threshold: f64::NAN,
    })
}
