//! Structural contrastive pre-training by subgraph instance discrimination.

mod checkpoint;
mod loss;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{eq1_literal_loss_grad, infonce_loss, infonce_loss_grad};

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::nn::{GinEncoder, GraphBatch, Optimizer, OptimizerKind, Params, HIDDEN_DIM, NUM_LAYERS};
use crate::rng::{derive_seed, rng_from, Rng64};
use crate::sampler::{sample_structure, SamplerParams, Subgraph};
use crate::spectral::{positional_embedding, DEFAULT_K};

const STREAM_INIT: u64 = 0x1917;
const STREAM_ORDER: u64 = 0x0bde;
const STREAM_VIEW: u64 = 0x5a3f;
const STREAM_DROP: u64 = 0xd209;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "infonce")]
    InfoNce,
    #[serde(rename = "eq1-literal")]
    Eq1Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Two independent walks from the same center form the positive pair.
    #[serde(rename = "instance-discrimination")]
    InstanceDiscrimination,
    /// One walk, two edge-dropped views.
    #[serde(rename = "aug-contrast")]
    AugContrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub walk_steps: usize,
    pub restart_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub objective: Objective,
    pub edge_drop: f64,
    pub k: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.005,
            temperature: 0.07,
            walk_steps: crate::sampler::DEFAULT_WALK_STEPS,
            restart_rate: crate::sampler::DEFAULT_RESTART_RATE,
            optimizer: OptimizerKind::Adam,
            weight_decay: 1e-5,
            seed: 0,
            loss: LossKind::InfoNce,
            objective: Objective::InstanceDiscrimination,
            edge_drop: 0.2,
            k: DEFAULT_K,
            hidden_dim: HIDDEN_DIM,
            num_layers: NUM_LAYERS,
        }
    }
}

impl PretrainConfig {
    pub fn sampler(&self) -> SamplerParams {
        SamplerParams {
            walk_steps: self.walk_steps,
            restart_rate: self.restart_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.temperature > 0.0) {
            problems.push(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.edge_drop) {
            problems.push(format!("edge_drop must lie in [0, 1), got {}", self.edge_drop));
        }
        if self.k == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            problems.push("k, hidden_dim and num_layers must be positive".to_string());
        }
        if let Err(Error::Config(p)) = self.sampler().validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Freshly initialized encoder for this config.
    pub fn init_encoder(&self) -> GinEncoder<f32> {
        let mut rng = rng_from(self.seed, &[STREAM_INIT]);
        GinEncoder::new(self.k, self.hidden_dim, self.num_layers, &mut rng)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl PretrainOutput {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", e + 1));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct View {
    sub: Subgraph,
    pos: Array2<f32>,
}

fn make_view(graph: &impl Topology, config: &PretrainConfig, epoch: usize, center: usize) -> Result<(View, View)> {
    let seed = |stream: u64, v: u64| derive_seed(config.seed, &[stream, epoch as u64, center as u64, v]);
    let embed = |sub: Subgraph| -> Result<View> {
        let pos = positional_embedding(&sub, config.k)?.matrix.mapv(|v| v as f32);
        Ok(View { sub, pos })
    };
    match config.objective {
        Objective::InstanceDiscrimination => {
            let a = sample_structure(graph, center, config.sampler(), seed(STREAM_VIEW, 0))?;
            let b = sample_structure(graph, center, config.sampler(), seed(STREAM_VIEW, 1))?;
            Ok((embed(a)?, embed(b)?))
        }
        Objective::AugContrast => {
            let base = sample_structure(graph, center, config.sampler(), seed(STREAM_VIEW, 0))?;
            let mut r0 = Rng64::seed_from_u64(seed(STREAM_DROP, 0));
            let mut r1 = Rng64::seed_from_u64(seed(STREAM_DROP, 1));
            let a = base.drop_edges(config.edge_drop, &mut r0);
            let b = base.drop_edges(config.edge_drop, &mut r1);
            Ok((embed(a)?, embed(b)?))
        }
    }
}

/// Contrastive loss and encoder gradient for one batch of centers.
pub fn batch_step(
    encoder: &GinEncoder<f32>,
    graph: &(impl Topology + Sync),
    config: &PretrainConfig,
    epoch: usize,
    centers: &[usize],
) -> Result<(f64, GinEncoder<f32>)> {
    let pairs = centers
        .par_iter()
        .map(|&c| make_view(graph, config, epoch, c))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&View> = pairs.iter().map(|p| &p.0).chain(pairs.iter().map(|p| &p.1)).collect();
    let batch = GraphBatch::from_csrs(views.iter().map(|v| v.sub.csr()));
    let x = ndarray::concatenate(ndarray::Axis(0), &views.iter().map(|v| v.pos.view()).collect::<Vec<_>>())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let (out, tape) = encoder.forward_tape(&batch, x.view());
    let z = batch.readout(out.view());
    let b = centers.len();
    let (anchors, positives) = (z.slice(s![..b, ..]), z.slice(s![b.., ..]));
    let (loss, da, dp) = match config.loss {
        LossKind::InfoNce => infonce_loss_grad(anchors, positives, config.temperature)?,
        LossKind::Eq1Literal => eq1_literal_loss_grad(anchors, positives)?,
    };
    let dz = ndarray::concatenate(ndarray::Axis(0), &[da.view(), dp.view()]).unwrap();
    let dn = batch.readout_backward(dz.view());
    let (grads, _) = encoder.backward(&batch, &tape, dn.view(), true);
    Ok((loss as f64, grads.unwrap()))
}

/// Pre-train an encoder on graph structure alone.
///
/// The graph is taken through [`Topology`], so node attributes are not
/// reachable. Sampling within a batch runs on the current rayon pool; results
/// do not depend on the number of workers.
pub fn pretrain(graph: &(impl Topology + Sync), config: &PretrainConfig, source: &str) -> Result<PretrainOutput> {
    config.validate()?;
    let n = graph.num_nodes();
    if n < config.batch_size {
        return Err(Error::Data(format!(
            "graph has {n} nodes, fewer than batch_size {}",
            config.batch_size
        )));
    }
    if (0..n).all(|v| graph.degree(v) == 0) {
        return Err(Error::Data("graph has no edges".into()));
    }
    let mut encoder = config.init_encoder();
    let mut opt = Optimizer::<f32>::new(config.optimizer, config.learning_rate, config.weight_decay);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(config.seed, &[STREAM_ORDER, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for centers in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let (loss, grads) = batch_step(&encoder, graph, config, epoch, centers)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            let g: Vec<&[f32]> = grads.params("").into_iter().map(|(_, s)| s).collect();
            opt.step(encoder.params_mut(), g)?;
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(PretrainOutput {
        checkpoint: Checkpoint::new(encoder, config.clone(), source),
        loss_curve: curve,
    })
}
