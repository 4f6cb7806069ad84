use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Graph, Topology};
use crate::error::{Error, Result};
use crate::rng::Rng64;

/// Disjoint train/test node partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

/// Uniform random train/test split with `round(train_fraction * N)` training nodes.
pub fn make_split(graph: &Graph, train_fraction: f64, seed: u64) -> Result<DataSplit> {
    if graph.labels().is_none() {
        return Err(Error::Data("make_split requires a labeled graph".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = graph.num_nodes();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Data(format!(
            "train_fraction {train_fraction} on {n} nodes leaves an empty train or test set"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = Rng64::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut train_ids = ids[..n_train].to_vec();
    let mut test_ids = ids[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(DataSplit {
        train_ids,
        test_ids,
        seed,
    })
}

/// Few-shot split: a 1:9 candidate:test partition drawn with `seed`, then exactly
/// `shots` training nodes per class drawn from the candidates with `seed ^ 1`.
///
/// Candidates not selected for training are left unused.
pub fn make_fewshot_split(graph: &Graph, shots: usize, seed: u64) -> Result<DataSplit> {
    if shots == 0 {
        return Err(Error::config("shots must be at least 1"));
    }
    let base = make_split(graph, 0.1, seed)?;
    let labels = graph.labels().expect("checked by make_split");
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for &i in &base.train_ids {
        per_class[labels[i] as usize].push(i);
    }
    let mut rng = Rng64::seed_from_u64(seed ^ 1);
    let mut train_ids = Vec::with_capacity(shots * per_class.len());
    for (class, pool) in per_class.iter_mut().enumerate() {
        if pool.len() < shots {
            return Err(Error::Data(format!(
                "class {class} has {} candidate nodes, fewer than shots = {shots}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        train_ids.extend_from_slice(&pool[..shots]);
    }
    train_ids.sort_unstable();
    Ok(DataSplit {
        train_ids,
        test_ids: base.test_ids,
        seed,
    })
}
