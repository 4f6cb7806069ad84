use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::real::{c, Real};

fn normalize<T: Real>(x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| !(n > T::zero())) {
        return Err(Error::Numerical(format!("embedding row {i} has zero norm; cosine undefined")));
    }
    let unit = &x / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

// d/dx of x/|x| applied to the upstream gradient g: (g - u (u.g)) / |x|
fn normalize_backward<T: Real>(unit: &Array2<T>, norms: &Array1<T>, g: &Array2<T>) -> Array2<T> {
    let proj = (unit * g).sum_axis(Axis(1)).insert_axis(Axis(1));
    (g - &(unit * &proj)) / &norms.view().insert_axis(Axis(1))
}

fn check_pair<T>(a: &ArrayView2<T>, p: &ArrayView2<T>) -> Result<()> {
    if a.dim() != p.dim() || a.nrows() < 2 {
        return Err(Error::Shape(format!(
            "contrastive loss needs matching batches of at least 2 rows, got {:?} and {:?}",
            a.dim(),
            p.dim()
        )));
    }
    Ok(())
}

/// InfoNCE over cosine similarities: row `i` of `anchors` must pick row `i`
/// of `positives` among all rows. Returns loss and both input gradients.
pub fn infonce_loss_grad<T: Real>(
    anchors: ArrayView2<T>,
    positives: ArrayView2<T>,
    temperature: f64,
) -> Result<(T, Array2<T>, Array2<T>)> {
    check_pair(&anchors, &positives)?;
    let b = anchors.nrows();
    let (ua, na) = normalize(anchors)?;
    let (up, np) = normalize(positives)?;
    let inv_t: T = c(1.0 / temperature);
    let logits = ua.dot(&up.t()) * inv_t;
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let mut loss = T::zero();
    let mut dlogits = Array2::zeros((b, b));
    for i in 0..b {
        let row = logits.row(i);
        let m = row.fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let e = row.mapv(|v| (v - m).exp());
        let z = e.sum();
        loss += (z.ln() + m - row[i]) * inv_b;
        let mut d = dlogits.row_mut(i);
        d.assign(&(e / z * inv_b));
        d[i] -= inv_b;
    }
    let ds = dlogits * inv_t;
    let dua = ds.dot(&up);
    let dup = ds.t().dot(&ua);
    Ok((loss, normalize_backward(&ua, &na, &dua), normalize_backward(&up, &np, &dup)))
}

pub fn infonce_loss<T: Real>(anchors: ArrayView2<T>, positives: ArrayView2<T>, temperature: f64) -> Result<T> {
    Ok(infonce_loss_grad(anchors, positives, temperature)?.0)
}

/// Energy form `-mean_i |a_i - p_i|^2 + mean_i log mean_{j != i} exp(|a_i - p_j|^2)`.
pub fn eq1_literal_loss_grad<T: Real>(anchors: ArrayView2<T>, positives: ArrayView2<T>) -> Result<(T, Array2<T>, Array2<T>)> {
    check_pair(&anchors, &positives)?;
    let b = anchors.nrows();
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let two: T = c(2.0);
    let mut da = Array2::zeros(anchors.raw_dim());
    let mut dp = Array2::zeros(positives.raw_dim());
    let mut loss = T::zero();
    let ln_neg = T::from_usize(b - 1).unwrap().ln();
    for i in 0..b {
        let diff_pos = &anchors.row(i) - &positives.row(i);
        loss -= diff_pos.dot(&diff_pos) * inv_b;
        da.row_mut(i).scaled_add(-two * inv_b, &diff_pos);
        dp.row_mut(i).scaled_add(two * inv_b, &diff_pos);

        let diffs: Vec<(usize, Array1<T>)> = (0..b)
            .filter(|&j| j != i)
            .map(|j| (j, &anchors.row(i) - &positives.row(j)))
            .collect();
        let e: Vec<T> = diffs.iter().map(|(_, d)| d.dot(d)).collect();
        let m = e.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let w: Vec<T> = e.iter().map(|&v| (v - m).exp()).collect();
        let z: T = w.iter().copied().sum();
        loss += (m + z.ln() - ln_neg) * inv_b;
        for ((j, d), wj) in diffs.iter().zip(&w) {
            let s = two * *wj / z * inv_b;
            da.row_mut(i).scaled_add(s, d);
            dp.row_mut(*j).scaled_add(-s, d);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("eq1-literal loss overflowed".into()));
    }
    Ok((loss, da, dp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::Rng64::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_rows_give_log_b() {
        let x = Array2::from_elem((4, 3), 0.5);
        let l = infonce_loss(x.view(), x.view(), 0.07).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let l = infonce_loss(a.view(), a.view(), 1.0).unwrap();
        // brute-force softmax of [1, 0] at the target
        let brute = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((l - brute).abs() < 1e-12);
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn permuting_pairs_is_invariant() {
        let a = rand_mat(6, 5, 1);
        let p = rand_mat(6, 5, 2);
        let perm = [3, 0, 5, 1, 4, 2];
        let l1 = infonce_loss(a.view(), p.view(), 0.2).unwrap();
        let l2 = infonce_loss(a.select(Axis(0), &perm).view(), p.select(Axis(0), &perm).view(), 0.2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariant() {
        let a = rand_mat(5, 2, 3);
        let p = rand_mat(5, 2, 4);
        let th = 0.7f64;
        let r = array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let l1 = infonce_loss(a.view(), p.view(), 0.07).unwrap();
        let l2 = infonce_loss(a.dot(&r).view(), p.dot(&r).view(), 0.07).unwrap();
        assert!((l1 - l2).abs() < 1e-8);
    }

    #[test]
    fn zero_row_rejected() {
        let mut a = rand_mat(3, 4, 5);
        a.row_mut(1).fill(0.0);
        assert!(matches!(infonce_loss(a.view(), a.view(), 0.1), Err(Error::Numerical(_))));
        assert!(infonce_loss(rand_mat(1, 4, 6).view(), rand_mat(1, 4, 7).view(), 0.1).is_err());
    }

    fn fd_check(f: impl Fn(&Array2<f64>, &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>)) {
        let a = rand_mat(4, 3, 8);
        let p = rand_mat(4, 3, 9);
        let (_, da, dp) = f(&a, &p);
        let h = 1e-6;
        for (which, g) in [(0, &da), (1, &dp)] {
            for idx in [(0, 0), (1, 2), (3, 1)] {
                let (mut ap, mut pp) = (a.clone(), p.clone());
                let (mut am, mut pm) = (a.clone(), p.clone());
                if which == 0 {
                    ap[idx] += h;
                    am[idx] -= h;
                } else {
                    pp[idx] += h;
                    pm[idx] -= h;
                }
                let n = (f(&ap, &pp).0 - f(&am, &pm).0) / (2.0 * h);
                assert!((n - g[idx]).abs() < 1e-6 * (1.0 + n.abs()), "{n} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn infonce_gradient() {
        fd_check(|a, p| infonce_loss_grad(a.view(), p.view(), 0.3).unwrap());
    }

    #[test]
    fn eq1_gradient() {
        fd_check(|a, p| eq1_literal_loss_grad(a.view(), p.view()).unwrap());
    }
}
