//! Normalized Laplacians and spectral positional embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::Topology;

/// Default embedding width.
pub const DEFAULT_K: usize = 32;

/// Eigenvalues closer than this are treated as one degenerate eigenspace
/// when ordering columns.
const TIE_TOLERANCE: f64 = 1e-9;

/// Eigenvectors of the `k` smallest normalized-Laplacian eigenvalues.
///
/// Columns are in ascending eigenvalue order, each sign-normalized so that its
/// largest-magnitude entry (lowest index on ties) is non-negative. When the
/// graph has fewer than `k` nodes the trailing columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding {
    pub matrix: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PositionalEmbedding {
    pub fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Dense unweighted adjacency of a topology.
pub fn dense_adjacency(graph: &impl Topology) -> Array2<f64> {
    let n = graph.num_nodes();
    let mut a = Array2::zeros((n, n));
    for u in 0..n {
        for &v in graph.neighbors(u) {
            a[(u, v as usize)] = 1.0;
        }
    }
    a
}

/// `I - D^{-1/2} A D^{-1/2}` of a graph.
pub fn normalized_laplacian(graph: &impl Topology) -> Array2<f64> {
    normalized_laplacian_dense(dense_adjacency(graph).view())
}

/// `I - D^{-1/2} A D^{-1/2}` of a symmetric (possibly weighted, possibly
/// self-looped) adjacency matrix. Degrees are row sums; zero-degree rows use
/// `D^{-1/2}_ii = 0`.
pub fn normalized_laplacian_dense(adj: ArrayView2<f64>) -> Array2<f64> {
    let n = adj.nrows();
    let inv_sqrt: Vec<f64> = adj
        .rows()
        .into_iter()
        .map(|r| {
            let d: f64 = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let a = adj[(i, j)];
            let off = if a != 0.0 { a * inv_sqrt[i] * inv_sqrt[j] } else { 0.0 };
            l[(i, j)] = if i == j { 1.0 - off } else { -off };
        }
    }
    l
}

pub fn positional_embedding(graph: &impl Topology, k: usize) -> Result<PositionalEmbedding> {
    embed_adjacency(dense_adjacency(graph).view(), k)
}

/// Spectral embedding of an arbitrary symmetric adjacency matrix.
pub fn embed_adjacency(adj: ArrayView2<f64>, k: usize) -> Result<PositionalEmbedding> {
    let n = adj.nrows();
    if n == 0 || adj.ncols() != n {
        return Err(Error::Shape(format!(
            "adjacency must be square and non-empty, got {:?}",
            adj.shape()
        )));
    }
    if k == 0 {
        return Err(Error::config("embedding dimension k must be at least 1"));
    }
    let laplacian = normalized_laplacian_dense(adj);
    let (values, vectors) = symmetric_eigen(&laplacian)?;

    let mut cols: Vec<(f64, Vec<f64>)> = values
        .into_iter()
        .zip(vectors)
        .map(|(lambda, mut v)| {
            sign_normalize(&mut v);
            (lambda, v)
        })
        .collect();
    cols.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Within a degenerate eigenspace, order lexicographically by vector.
    let mut start = 0;
    while start < cols.len() {
        let mut end = start + 1;
        while end < cols.len() && cols[end].0 - cols[start].0 <= TIE_TOLERANCE {
            end += 1;
        }
        cols[start..end].sort_by(|a, b| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        start = end;
    }

    let kept = k.min(n);
    let mut matrix = Array2::zeros((n, k));
    for (j, (_, v)) in cols.iter().take(kept).enumerate() {
        for (i, &x) in v.iter().enumerate() {
            matrix[(i, j)] = x;
        }
    }
    Ok(PositionalEmbedding {
        matrix,
        eigenvalues: cols.iter().take(kept).map(|c| c.0).collect(),
    })
}

fn sign_normalize(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenpairs of a dense symmetric matrix as `(values, column vectors)`.
fn symmetric_eigen(m: &Array2<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = SymmetricEigen::try_new(dm, f64::EPSILON, 10_000 * n.max(1)).ok_or_else(|| {
        let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
            .fold(0.0, f64::max);
        Error::Numerical(format!(
            "symmetric eigensolver did not converge on a {n}x{n} matrix (frobenius norm {frob:.3e}, max asymmetry {asym:.3e})"
        ))
    })?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite eigenvalue on a {n}x{n} Laplacian")));
    }
    let values = eig.eigenvalues.iter().copied().collect();
    let vectors = (0..n)
        .map(|j| eig.eigenvectors.column(j).iter().copied().collect())
        .collect();
    Ok((values, vectors))
}
