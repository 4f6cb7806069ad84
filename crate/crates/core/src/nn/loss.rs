use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::real::Real;

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[u32]) -> Result<(T, Array2<T>)> {
    let (b, classes) = logits.dim();
    if b == 0 || labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} logit rows", labels.len())));
    }
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let mut grad = Array2::zeros((b, classes));
    let mut loss = T::zero();
    for (i, row) in logits.outer_iter().enumerate() {
        let y = labels[i] as usize;
        if y >= classes {
            return Err(Error::Shape(format!("label {y} out of range for {classes} classes")));
        }
        let m = row.fold(T::neg_infinity(), |a, &v| a.max(v));
        let exps = row.mapv(|v| (v - m).exp());
        let z: T = exps.sum();
        loss = loss + (z.ln() + m - row[y]) * inv_b;
        let mut g = grad.row_mut(i);
        g.assign(&(exps / z * inv_b));
        g[y] = g[y] - inv_b;
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("non-finite cross-entropy".into()));
    }
    Ok((loss, grad))
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows<T: Real>(logits: ArrayView2<T>) -> Vec<u32> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}
