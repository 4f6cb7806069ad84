//! Graph Isomorphism Network encoder with a hand-derived adjoint.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;

use super::batch::GraphBatch;
use super::linear::Linear;
use super::Params;
use crate::error::{Error, Result};
use crate::real::{c, Real};
use crate::sampler::Subgraph;

/// One GIN layer: `h <- MLP((1 + eps) h + sum_{u in N(v)} h_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GinLayer<T> {
    /// Learnable scalar, stored as a length-1 vector.
    pub eps: Array1<T>,
    pub lin1: Linear<T>,
    pub lin2: Linear<T>,
}

/// Stack of GIN layers mapping `N × input_dim` to `N × hidden_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GinEncoder<T> {
    pub layers: Vec<GinLayer<T>>,
}

struct LayerTape<T> {
    input: Array2<T>,
    agg: Array2<T>,
    z1: Array2<T>,
    a1: Array2<T>,
    z2: Array2<T>,
}

/// Intermediate values of a forward pass, consumed by the backward pass.
pub struct GinTape<T> {
    layers: Vec<LayerTape<T>>,
}

fn relu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

fn relu_mask<T: Real>(d: &mut Array2<T>, pre: &Array2<T>) {
    Zip::from(d).and(pre).for_each(|g, &z| {
        if z <= T::zero() {
            *g = T::zero();
        }
    });
}

impl<T: Real> GinEncoder<T> {
    /// Glorot-initialized encoder with `eps = 0`.
    pub fn new(input_dim: usize, hidden_dim: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..num_layers)
            .map(|i| {
                let inp = if i == 0 { input_dim } else { hidden_dim };
                GinLayer {
                    eps: Array1::zeros(1),
                    lin1: Linear::glorot(inp, hidden_dim, rng),
                    lin2: Linear::glorot(hidden_dim, hidden_dim, rng),
                }
            })
            .collect();
        GinEncoder { layers }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|i| {
                let inp = if i == 0 { input_dim } else { hidden_dim };
                GinLayer {
                    eps: Array1::zeros(1),
                    lin1: Linear::zeros(inp, hidden_dim),
                    lin2: Linear::zeros(hidden_dim, hidden_dim),
                }
            })
            .collect();
        GinEncoder { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].lin1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().lin2.output_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zeros_like(&self) -> Self {
        GinEncoder {
            layers: self
                .layers
                .iter()
                .map(|l| GinLayer {
                    eps: Array1::zeros(1),
                    lin1: l.lin1.zeros_like(),
                    lin2: l.lin2.zeros_like(),
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> GinEncoder<U> {
        GinEncoder {
            layers: self
                .layers
                .iter()
                .map(|l| GinLayer {
                    eps: l.eps.mapv(|v| c(v.to_f64())),
                    lin1: l.lin1.cast(),
                    lin2: l.lin2.cast(),
                })
                .collect(),
        }
    }

    pub fn forward(&self, batch: &GraphBatch, x: ArrayView2<T>) -> Array2<T> {
        self.forward_tape(batch, x).0
    }

    pub fn forward_tape(&self, batch: &GraphBatch, x: ArrayView2<T>) -> (Array2<T>, GinTape<T>) {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        let mut tape = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let scale = T::one() + layer.eps[0];
            let agg = batch.aggregate(h.view()) + &h.mapv(|v| v * scale);
            let z1 = layer.lin1.forward(agg.view());
            let a1 = relu(&z1);
            let z2 = layer.lin2.forward(a1.view());
            let out = if i < last { relu(&z2) } else { z2.clone() };
            tape.push(LayerTape {
                input: h,
                agg,
                z1,
                a1,
                z2,
            });
            h = out;
        }
        (h, GinTape { layers: tape })
    }

    /// Back-propagate `d_out`; returns parameter gradients (when requested) and
    /// the gradient with respect to the encoder input.
    pub fn backward(
        &self,
        batch: &GraphBatch,
        tape: &GinTape<T>,
        d_out: ArrayView2<T>,
        param_grads: bool,
    ) -> (Option<GinEncoder<T>>, Array2<T>) {
        let last = self.layers.len() - 1;
        let mut grads = param_grads.then(|| self.zeros_like());
        let mut d = d_out.to_owned();
        for (i, (layer, t)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            if i < last {
                relu_mask(&mut d, &t.z2);
            }
            let mut da1 = layer.lin2.backward_input(d.view());
            if let Some(g) = grads.as_mut() {
                let (g2, _) = layer.lin2.backward(t.a1.view(), d.view());
                g.layers[i].lin2 = g2;
            }
            relu_mask(&mut da1, &t.z1);
            let dagg = layer.lin1.backward_input(da1.view());
            if let Some(g) = grads.as_mut() {
                let (g1, _) = layer.lin1.backward(t.agg.view(), da1.view());
                g.layers[i].lin1 = g1;
                g.layers[i].eps[0] = Zip::from(&dagg)
                    .and(&t.input)
                    .fold(T::zero(), |acc, &a, &b| acc + a * b);
            }
            let scale = T::one() + layer.eps[0];
            // symmetric adjacency: A^T = A
            d = batch.aggregate(dagg.view()) + &dagg.mapv(|v| v * scale);
        }
        (grads, d)
    }
}

impl<T: Real> Params<T> for GinEncoder<T> {
    fn params(&self, prefix: &str) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layers.{i}.eps"), l.eps.as_slice().unwrap()));
            out.extend(l.lin1.params(&format!("{prefix}.layers.{i}.lin1")));
            out.extend(l.lin2.params(&format!("{prefix}.layers.{i}.lin2")));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.eps.as_slice_mut().unwrap());
            out.extend(l.lin1.params_mut());
            out.extend(l.lin2.params_mut());
        }
        out
    }
}

/// Encode a single subgraph.
pub fn gin_forward<T: Real>(encoder: &GinEncoder<T>, subgraph: &Subgraph, node_inputs: ArrayView2<T>) -> Result<Array2<T>> {
    if node_inputs.nrows() != subgraph.len() || node_inputs.ncols() != encoder.input_dim() {
        return Err(Error::Shape(format!(
            "node inputs are {}x{}, expected {}x{}",
            node_inputs.nrows(),
            node_inputs.ncols(),
            subgraph.len(),
            encoder.input_dim()
        )));
    }
    let batch = GraphBatch::from_csrs([subgraph.csr()]);
    Ok(encoder.forward(&batch, node_inputs))
}
