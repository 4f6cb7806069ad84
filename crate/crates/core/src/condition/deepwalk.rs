//! Uniform-walk skip-gram embeddings used to synthesize attributes for graphs
//! that have none.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepWalkParams {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DeepWalkParams {
    fn default() -> Self {
        DeepWalkParams {
            dim: 64,
            walks_per_node: 10,
            walk_length: 40,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

const NEG_TABLE_SIZE: usize = 1 << 20;
const NEG_RETRIES: usize = 8;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Skip-gram with negative sampling over uniform random walks.
///
/// Returns the input embeddings with unit-normalized rows.
pub fn deepwalk_embed(graph: &impl Topology, params: &DeepWalkParams) -> Result<Array2<f64>> {
    let n = graph.num_nodes();
    if params.dim < 2 {
        return Err(Error::config(format!("deepwalk dim must be at least 2, got {}", params.dim)));
    }
    if (0..n).all(|v| graph.degree(v) == 0) {
        return Err(Error::Data("deepwalk_embed requires a graph with at least one edge".into()));
    }
    if params.walk_length == 0 || params.walks_per_node == 0 || params.window == 0 {
        return Err(Error::config("walks_per_node, walk_length and window must be positive"));
    }

    let mut rng = rng_from(params.seed, &[0xD33F]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut walks: Vec<Vec<u32>> = Vec::with_capacity(n * params.walks_per_node);
    for _ in 0..params.walks_per_node {
        order.shuffle(&mut rng);
        for &start in &order {
            let mut walk = Vec::with_capacity(params.walk_length);
            let mut cur = start;
            walk.push(cur as u32);
            while walk.len() < params.walk_length {
                let nb = graph.neighbors(cur);
                if nb.is_empty() {
                    break;
                }
                cur = nb[rng.random_range(0..nb.len())] as usize;
                walk.push(cur as u32);
            }
            walks.push(walk);
        }
    }

    // unigram^0.75 negative table
    let mut counts = vec![0f64; n];
    for w in &walks {
        for &v in w {
            counts[v as usize] += 1.0;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut table = Vec::with_capacity(NEG_TABLE_SIZE);
    let mut acc = 0.0;
    let mut node = 0;
    for i in 0..NEG_TABLE_SIZE {
        while node + 1 < n && (i as f64 + 0.5) / NEG_TABLE_SIZE as f64 > (acc + weights[node]) / total {
            acc += weights[node];
            node += 1;
        }
        table.push(node as u32);
    }

    let dim = params.dim;
    let mut emb_in: Vec<f64> = (0..n * dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut emb_out = vec![0f64; n * dim];
    let mut grad = vec![0f64; dim];

    let total_pairs = (params.epochs * walks.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut processed = 0usize;
    for _ in 0..params.epochs {
        for walk in &walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lr = (params.learning_rate * (1.0 - processed as f64 / total_pairs))
                    .max(params.learning_rate * 1e-4);
                processed += 1;
                // word2vec-style dynamic window
                let reduced = rng.random_range(0..params.window);
                let span = params.window - reduced;
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(walk.len() - 1);
                let c = center as usize;
                let center_nb = graph.neighbors(c);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = walk[ctx_pos];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for s in 0..=params.negatives {
                        let (target, label) = if s == 0 {
                            (context, 1.0)
                        } else {
                            // the center, the context and direct neighbors of the
                            // center are known positives and never used as negatives
                            let mut draw = None;
                            for _ in 0..NEG_RETRIES {
                                let t = table[rng.random_range(0..table.len())];
                                if t != context && t != center && center_nb.binary_search(&t).is_err() {
                                    draw = Some(t);
                                    break;
                                }
                            }
                            match draw {
                                Some(t) => (t, 0.0),
                                None => continue,
                            }
                        };
                        let t = target as usize;
                        let u = &emb_in[c * dim..(c + 1) * dim];
                        let v = &mut emb_out[t * dim..(t + 1) * dim];
                        let score: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(score)) * lr;
                        for k in 0..dim {
                            grad[k] += g * v[k];
                            v[k] += g * u[k];
                        }
                    }
                    let u = &mut emb_in[c * dim..(c + 1) * dim];
                    for k in 0..dim {
                        u[k] += grad[k];
                    }
                }
            }
        }
    }

    let mut out = Array2::from_shape_vec((n, dim), emb_in).expect("shape matches");
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            row[0] = 1.0;
        }
    }
    Ok(out)
}
