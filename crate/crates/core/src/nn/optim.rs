use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{c, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            _ => Err(Error::config(format!("optimizer: unknown value '{s}' (expected sgd, adam or adamw)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer over a flat list of parameter tensors.
///
/// SGD and Adam apply weight decay as an L2 term on the gradient; AdamW
/// decays the parameters directly.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            momentum: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} parameter tensors, {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let lr: T = c(self.learning_rate);
        let wd: T = c(self.weight_decay);
        let (b1, b2): (T, T) = (c(BETA1), c(BETA2));
        let bc1: T = c(1.0 - BETA1.powi(self.step));
        let bc2: T = c(1.0 - BETA2.powi(self.step));
        let eps: T = c(ADAM_EPS);
        let mom: T = c(self.momentum);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i}: parameter/gradient length mismatch")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let mut gj = g[j];
                if !gj.is_finite() {
                    return Err(Error::Numerical(format!("non-finite gradient in tensor {i}")));
                }
                match self.kind {
                    OptimizerKind::Sgd => {
                        gj = gj + wd * p[j];
                        if self.momentum != 0.0 {
                            m[j] = if self.step == 1 { gj } else { mom * m[j] + gj };
                            gj = m[j];
                        }
                        p[j] = p[j] - lr * gj;
                    }
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        if self.kind == OptimizerKind::Adam {
                            gj = gj + wd * p[j];
                        } else {
                            p[j] = p[j] - lr * wd * p[j];
                        }
                        m[j] = b1 * m[j] + (T::one() - b1) * gj;
                        v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
