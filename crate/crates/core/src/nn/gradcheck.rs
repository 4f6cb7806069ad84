use serde::Serialize;

use crate::error::{Error, Result};

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Third differences of the loss on the five-point stencil above this
/// (relative to the largest slope, at least 1) mark an entry whose stencil
/// straddles a rectifier kink.
pub const KINK_TOLERANCE: f64 = 1e-7;

/// Analytic vs numerical gradient agreement.
///
/// The error of a tensor is `max|a - n| / max(max|a|, max|n|)` over its
/// smooth entries; an all-zero pair counts as 0. Entries where the loss is
/// not differentiable within the step are counted in `kinks` instead.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub per_parameter: Vec<(String, f64)>,
    pub entries: usize,
    pub kinks: usize,
}

impl GradientReport {
    /// Error within `tolerance` and at most 1% of entries on kinks.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance && self.kinks * 100 <= self.entries
    }
}

/// Compare analytic gradients with central differences for every entry of
/// every trainable tensor.
///
/// `gradient` returns one vector per tensor listed by `trainable`, in the
/// same order.
pub fn backprop_check<M>(
    model: &mut M,
    loss: impl Fn(&M) -> Result<f64>,
    gradient: impl Fn(&M) -> Result<Vec<Vec<f64>>>,
    trainable: impl Fn(&mut M) -> Vec<(String, &mut [f64])>,
) -> Result<GradientReport> {
    let analytic = gradient(model)?;
    let names: Vec<String> = trainable(model).into_iter().map(|(n, _)| n).collect();
    if names.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} trainable tensors but {} gradients",
            names.len(),
            analytic.len()
        )));
    }
    let base = loss(model)?;
    let (mut entries, mut kinks) = (0, 0);
    let mut per_parameter = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let a = &analytic[ti];
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite analytic gradient in {name}")));
        }
        let mut pairs = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let orig = trainable(model)[ti].1[j];
            let eval = |x: f64, m: &mut M| -> Result<f64> {
                trainable(m)[ti].1[j] = x;
                loss(m)
            };
            let plus = eval(orig + FD_STEP, model)?;
            let minus = eval(orig - FD_STEP, model)?;
            let plus2 = eval(orig + 2.0 * FD_STEP, model)?;
            let minus2 = eval(orig - 2.0 * FD_STEP, model)?;
            trainable(model)[ti].1[j] = orig;
            let n = (plus - minus) / (2.0 * FD_STEP);
            if !n.is_finite() {
                return Err(Error::Numerical(format!("non-finite numerical gradient in {name}")));
            }
            let f = [minus2, minus, base, plus, plus2];
            let slope: Vec<f64> = f.windows(2).map(|w| (w[1] - w[0]) / FD_STEP).collect();
            let d: Vec<f64> = slope.windows(2).map(|w| w[1] - w[0]).collect();
            let jump = (d[1] - d[0]).abs().max((d[2] - d[1]).abs());
            let level = slope.iter().fold(1.0f64, |m, s| m.max(s.abs()));
            entries += 1;
            if jump > KINK_TOLERANCE * level {
                kinks += 1;
            } else {
                pairs.push((a[j], n));
            }
        }
        let diff = pairs.iter().fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = pairs.iter().fold(0.0f64, |m, (x, y)| m.max(x.abs()).max(y.abs()));
        per_parameter.push((name, if scale == 0.0 { 0.0 } else { diff / scale }));
    }
    let max_relative_error = per_parameter.iter().fold(0.0f64, |m, (_, e)| m.max(*e));
    Ok(GradientReport {
        max_relative_error,
        per_parameter,
        entries,
        kinks,
    })
}
