//! Per-node preprocessing: RWR subgraph, positional embedding and condition.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::{AttributeSource, FinetuneConfig, Mode};
use crate::cache::{content_key, decode_embedding, decode_ids, encode_embedding, encode_ids, CacheDir};
use crate::condition::{condition_embedding, cosine_kernel, deepwalk_embed, discretize, soft_condition_embedding, DeepWalkParams};
use crate::error::{Error, Result};
use crate::graph::{DatasetBundle, Graph, Topology};
use crate::nn::BatchInput;
use crate::sampler::{induce_subgraph, sample_subgraph, Subgraph};
use crate::spectral::positional_embedding;

#[derive(Debug, Clone)]
pub struct PreparedNode {
    /// Induced subgraph; attribute rows are gathered on demand from
    /// [`PreparedData::attributes`].
    pub sub: Subgraph,
    pub pos: Array2<f32>,
    /// Zero matrix when the mode has no condition branch.
    pub cond: Array2<f32>,
}

/// Cached model inputs of a dataset, indexed by node id.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub labels: Vec<u32>,
    pub num_classes: usize,
    pub nodes: Vec<Option<PreparedNode>>,
    pub attributes: Option<Array2<f32>>,
}

impl PreparedData {
    pub fn node(&self, id: usize) -> Result<&PreparedNode> {
        self.nodes
            .get(id)
            .and_then(|n| n.as_ref())
            .ok_or_else(|| Error::Data(format!("node {id} was not prepared")))
    }

    pub fn attr_dim(&self) -> Option<usize> {
        self.attributes.as_ref().map(|a| a.ncols())
    }

    /// Stacked inputs for `ids`; attribute rows are included when `with_attrs`.
    pub fn batch(&self, ids: &[usize], with_attrs: bool) -> Result<BatchInput<f32>> {
        let nodes = ids.iter().map(|&i| self.node(i)).collect::<Result<Vec<_>>>()?;
        let local: Vec<Option<Array2<f32>>> = nodes
            .iter()
            .map(|n| match (&self.attributes, with_attrs) {
                (Some(x), true) => Some(x.select(Axis(0), &n.sub.node_ids)),
                _ => None,
            })
            .collect();
        BatchInput::from_parts(
            nodes
                .iter()
                .zip(&local)
                .map(|(n, x)| (n.sub.csr(), n.pos.view(), n.cond.view(), x.as_ref().map(|a| a.view()))),
        )
    }

    pub fn labels_of(&self, ids: &[usize]) -> Vec<u32> {
        ids.iter().map(|&i| self.labels[i]).collect()
    }
}

fn f64_bytes<'a>(it: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    it.flat_map(|v| v.to_le_bytes()).collect()
}

fn structure_bytes(graph: &Graph) -> Vec<u8> {
    let mut out = (graph.num_nodes() as u64).to_le_bytes().to_vec();
    for (u, v) in graph.edge_list() {
        out.extend_from_slice(&(u as u64).to_le_bytes());
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out
}

/// Attributes used for conditions: from the dataset or computed by DeepWalk.
pub fn resolve_attributes(dataset: &DatasetBundle, config: &FinetuneConfig) -> Result<Option<Array2<f64>>> {
    match config.attributes {
        AttributeSource::Dataset => Ok(dataset.graph.attributes().cloned()),
        AttributeSource::Deepwalk => {
            let params = DeepWalkParams {
                seed: config.sample_seed,
                ..DeepWalkParams::default()
            };
            deepwalk_embed(&dataset.graph.structure(), &params).map(Some)
        }
    }
}

fn condition_of(attrs: ArrayView2<f64>, mode: Mode, k: usize, threshold: f64) -> Result<Array2<f64>> {
    let kernel = cosine_kernel(attrs)?;
    let emb = if mode == Mode::SoftCondition {
        soft_condition_embedding(&kernel, k)?
    } else {
        condition_embedding(&discretize(&kernel, threshold)?, k, threshold)?
    };
    Ok(emb.embedding.matrix)
}

/// Sample, embed and condition every node in `ids` (parallel over nodes).
///
/// With `cache` set, node lists, positional embeddings and conditions are
/// read from / written to content-addressed directories below it.
pub fn prepare(dataset: &DatasetBundle, config: &FinetuneConfig, ids: &[usize], cache: Option<&Path>) -> Result<PreparedData> {
    config.validate()?;
    let labels = dataset
        .graph
        .labels()
        .ok_or_else(|| Error::Data(format!("dataset '{}' has no labels", dataset.name)))?
        .to_vec();
    let mode = config.mode;
    let attrs = resolve_attributes(dataset, config)?;
    let needs_attrs = mode.uses_condition() || mode == Mode::SimpleConcat;
    if needs_attrs && attrs.is_none() {
        return Err(Error::Data(format!(
            "dataset '{}' has no node attributes; set attributes=deepwalk or run `embed` first",
            dataset.name
        )));
    }
    let graph = match &attrs {
        Some(a) => dataset.graph.clone().with_attributes(a.clone())?,
        None => dataset.graph.clone(),
    };

    let dirs = match cache {
        Some(root) => {
            let skey = content_key([
                &b"structure-v1"[..],
                &structure_bytes(&graph),
                &(config.walk_steps as u64).to_le_bytes(),
                &config.restart_rate.to_le_bytes(),
                &config.sample_seed.to_le_bytes(),
                &(config.k as u64).to_le_bytes(),
            ]);
            let ckey = match (&attrs, mode.uses_condition()) {
                (Some(a), true) => {
                    let tag = if mode == Mode::SoftCondition { b"soft".to_vec() } else { config.threshold.to_le_bytes().to_vec() };
                    Some(content_key([&b"condition-v1"[..], skey.as_bytes(), &f64_bytes(a.iter()), &tag]))
                }
                _ => None,
            };
            let s = CacheDir::open(root, &skey)?;
            let c = ckey.map(|k| CacheDir::open(root, &k)).transpose()?;
            Some((s, c))
        }
        None => None,
    };

    let k = config.k;
    let one = |id: usize| -> Result<PreparedNode> {
        let (sdir, cdir) = match &dirs {
            Some((s, c)) => (Some(s), c.as_ref()),
            None => (None, None),
        };
        let name = |ext: &str| format!("{id}.{ext}");
        let cached_nodes = sdir.and_then(|d| d.read(&name("nodes"))).map(|b| decode_ids(&b)).transpose()?;
        let sub = match cached_nodes {
            Some(nodes) => induce_subgraph(&graph, &nodes, id)?,
            None => {
                let s = sample_subgraph(&graph, id, config.sampler(), crate::sampler::center_seed(config.sample_seed, id))?;
                if let Some(d) = sdir {
                    d.write(&name("nodes"), &encode_ids(&s.node_ids))?;
                }
                s
            }
        };
        let cached_pos = sdir.and_then(|d| d.read(&name("pe"))).map(|b| decode_embedding(&b)).transpose()?;
        let pos = match cached_pos {
            Some(p) => p,
            None => {
                let p = positional_embedding(&sub, k)?.matrix;
                if let Some(d) = sdir {
                    d.write(&name("pe"), &encode_embedding(p.view()))?;
                }
                p
            }
        };
        let cond = if mode.uses_condition() {
            let cached = cdir.and_then(|d| d.read(&name("ce"))).map(|b| decode_embedding(&b)).transpose()?;
            match cached {
                Some(c) => c,
                None => {
                    let local = sub.local_attributes.as_ref().expect("attributes resolved above");
                    let c = condition_of(local.view(), mode, k, config.threshold)?;
                    if let Some(d) = cdir {
                        d.write(&name("ce"), &encode_embedding(c.view()))?;
                    }
                    c
                }
            }
        } else {
            Array2::zeros((sub.len(), k))
        };
        if pos.dim() != (sub.len(), k) || cond.dim() != (sub.len(), k) {
            return Err(Error::Data(format!("cached embedding for node {id} has the wrong shape")));
        }
        let mut sub = sub;
        sub.local_attributes = None;
        Ok(PreparedNode {
            sub,
            pos: pos.mapv(|v| v as f32),
            cond: cond.mapv(|v| v as f32),
        })
    };

    let mut wanted = ids.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let built = wanted.par_iter().map(|&id| one(id)).collect::<Result<Vec<_>>>()?;
    let mut nodes = vec![None; graph.num_nodes()];
    for (id, node) in wanted.into_iter().zip(built) {
        nodes[id] = Some(node);
    }
    Ok(PreparedData {
        name: dataset.name.clone(),
        labels,
        num_classes: dataset.graph.num_classes(),
        nodes,
        attributes: if mode == Mode::SimpleConcat { attrs.map(|a| a.mapv(|v| v as f32)) } else { None },
    })
}
