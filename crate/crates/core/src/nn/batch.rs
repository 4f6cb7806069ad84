use ndarray::{Array2, ArrayView2, Axis};

use crate::real::Real;

/// Disjoint union of local graphs, nodes laid out contiguously per graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    /// `offsets[g]..offsets[g+1]` are the rows of graph `g`.
    pub offsets: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl GraphBatch {
    /// Build from per-graph local CSR arrays.
    pub fn from_csrs<'a>(graphs: impl IntoIterator<Item = (&'a [usize], &'a [u32])>) -> Self {
        let mut offsets = vec![0];
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for (rp, ci) in graphs {
            let base = *offsets.last().unwrap() as u32;
            let n = rp.len() - 1;
            for v in 0..n {
                col_idx.extend(ci[rp[v]..rp[v + 1]].iter().map(|&u| u + base));
                row_ptr.push(col_idx.len());
            }
            offsets.push(base as usize + n);
        }
        GraphBatch {
            offsets,
            row_ptr,
            col_idx,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// `A · h` for the block-diagonal adjacency.
    pub fn aggregate<T: Real>(&self, h: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(h.raw_dim());
        for v in 0..self.num_nodes() {
            let mut row = out.row_mut(v);
            for &u in &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]] {
                row += &h.row(u as usize);
            }
        }
        out
    }

    /// Per-graph mean of node rows.
    pub fn readout<T: Real>(&self, h: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.num_graphs(), h.ncols()));
        for g in 0..self.num_graphs() {
            let (a, b) = (self.offsets[g], self.offsets[g + 1]);
            let n = T::from_usize(b - a).unwrap();
            let mean = h.slice(ndarray::s![a..b, ..]).sum_axis(Axis(0)) / n;
            out.row_mut(g).assign(&mean);
        }
        out
    }

    /// Adjoint of [`readout`](Self::readout).
    pub fn readout_backward<T: Real>(&self, d: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.num_nodes(), d.ncols()));
        for g in 0..self.num_graphs() {
            let (a, b) = (self.offsets[g], self.offsets[g + 1]);
            let n = T::from_usize(b - a).unwrap();
            let share = d.row(g).mapv(|x| x / n);
            for v in a..b {
                out.row_mut(v).assign(&share);
            }
        }
        out
    }
}

/// Mean over rows of a single node-embedding matrix.
pub fn readout<T: Real>(h: ArrayView2<T>) -> crate::Result<ndarray::Array1<T>> {
    if h.nrows() == 0 {
        return Err(crate::Error::Shape("readout of an empty node set".into()));
    }
    Ok(h.sum_axis(Axis(0)) / T::from_usize(h.nrows()).unwrap())
}
