use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{prepare, EpochStats, EvalReport, FinetuneConfig, Mode, PreparedData, RunResult};
use crate::error::{Error, Result};
use crate::graph::{make_fewshot_split, make_split, DataSplit, DatasetBundle, Topology};
use crate::nn::{argmax_rows, softmax_cross_entropy, GinEncoder, GraphControlModel, Linear, Optimizer, HIDDEN_DIM, NUM_LAYERS};
use crate::pretrain::Checkpoint;
use crate::rng::{derive_seed, rng_from};

const STREAM_INIT: u64 = 0x1a17;
const STREAM_ORDER: u64 = 0x0bd3;
const EVAL_CHUNK: usize = 512;
const SPLIT_ATTEMPTS: u64 = 100;

/// Model for `config.mode`, initialized from `init_seed`.
pub fn build_model(
    config: &FinetuneConfig,
    checkpoint: Option<&Checkpoint>,
    num_classes: usize,
    attr_dim: Option<usize>,
    init_seed: u64,
) -> Result<GraphControlModel<f32>> {
    let mode = config.mode;
    let mut rng = rng_from(init_seed, &[STREAM_INIT]);
    let pretrained = match (checkpoint, mode.needs_checkpoint()) {
        (Some(ck), _) => {
            let (k, l, layers) = ck.dims();
            if k != config.k {
                return Err(Error::Shape(format!("checkpoint has k = {k} but config k = {}", config.k)));
            }
            let _ = (l, layers);
            ck.encoder.clone()
        }
        (None, true) => return Err(Error::config(format!("mode {mode} requires a checkpoint"))),
        (None, false) => GinEncoder::new(config.k, HIDDEN_DIM, NUM_LAYERS, &mut rng),
    };
    let (k, l, layers) = (pretrained.input_dim(), pretrained.output_dim(), pretrained.num_layers());
    let mut model = match mode {
        Mode::StructureOnly | Mode::SimpleConcat => GraphControlModel::structure_only(&pretrained, num_classes, &mut rng),
        _ => GraphControlModel::new(&pretrained, num_classes, &mut rng),
    };
    match mode {
        Mode::Finetune | Mode::SoftCondition | Mode::StructureOnly => {}
        Mode::Prompt => model.enable_prompts(&mut rng),
        Mode::Scratch => {
            model.frozen = Some(GinEncoder::new(k, l, layers, &mut rng));
            model.copy = Some(GinEncoder::new(k, l, layers, &mut rng));
            model.z1 = Some(Linear::glorot(k, k, &mut rng));
            model.z2 = Some(Linear::glorot(l, l, &mut rng));
            model.trainable.frozen = true;
        }
        Mode::NoZero => {
            model.z1 = Some(Linear::glorot(k, k, &mut rng));
            model.z2 = Some(Linear::glorot(l, l, &mut rng));
        }
        Mode::NoFrozen => model.frozen = None,
        Mode::SimpleConcat => {
            let d = attr_dim.ok_or_else(|| Error::Data("simple_concat needs node attributes".into()))?;
            model.attr_encoder = Some(GinEncoder::new(d, l, layers, &mut rng));
            model.trainable.attr = true;
        }
    }
    model.validate()?;
    Ok(model)
}

fn uses_prompts(model: &GraphControlModel<f32>) -> bool {
    model.prompts.is_some()
}

/// Fraction of `ids` whose argmax prediction matches the label.
pub fn evaluate(model: &GraphControlModel<f32>, data: &PreparedData, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Data("evaluate called with no nodes".into()));
    }
    let with_attrs = model.attr_encoder.is_some();
    let mut correct = 0usize;
    for chunk in ids.chunks(EVAL_CHUNK) {
        let input = data.batch(chunk, with_attrs)?;
        let logits = model.logits(&input, uses_prompts(model))?;
        let pred = argmax_rows(logits.view());
        correct += pred.iter().zip(chunk).filter(|(p, &i)| **p == data.labels[i]).count();
    }
    Ok(correct as f64 / ids.len() as f64)
}

/// Train one model on prepared inputs and record its curve.
pub fn run_prepared(
    checkpoint: Option<&Checkpoint>,
    data: &PreparedData,
    split: &DataSplit,
    config: &FinetuneConfig,
    init_seed: u64,
) -> Result<(GraphControlModel<f32>, RunResult)> {
    let start = Instant::now();
    if split.train_ids.is_empty() || split.test_ids.is_empty() {
        return Err(Error::Data("split has an empty train or test set".into()));
    }
    let mut model = build_model(config, checkpoint, data.num_classes, data.attr_dim(), init_seed)?;
    let with_attrs = model.attr_encoder.is_some();
    let prompts = uses_prompts(&model);
    let mut opt = Optimizer::<f32>::new(config.optimizer, config.learning_rate, config.weight_decay).with_momentum(config.momentum);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order = split.train_ids.clone();
        order.shuffle(&mut rng_from(init_seed, &[STREAM_ORDER, epoch as u64]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let input = data.batch(chunk, with_attrs)?;
            let (h, tape) = model.forward_tape(&input, prompts)?;
            let logits = model.classifier.forward(h.view());
            let (loss, dl) = softmax_cross_entropy(logits.view(), &data.labels_of(chunk))?;
            let grads = model.backward(&input, &tape, dl.view());
            let g: Vec<&[f32]> = grads.trainable_params().into_iter().map(|(_, s)| s).collect();
            opt.step(model.trainable_params_mut(), g)?;
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        let loss = loss_sum / order.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged in epoch {epoch}")));
        }
        curve.push(EpochStats {
            epoch,
            loss,
            train_acc: evaluate(&model, data, &split.train_ids)?,
            test_acc: evaluate(&model, data, &split.test_ids)?,
        });
    }
    let test_accuracy = match curve.last() {
        Some(e) => e.test_acc,
        None => evaluate(&model, data, &split.test_ids)?,
    };
    let (best_epoch, best_test_accuracy) = curve
        .iter()
        .fold((0, f64::NEG_INFINITY), |(be, ba), e| if e.test_acc > ba { (e.epoch, e.test_acc) } else { (be, ba) });
    let result = RunResult {
        split_seed: split.seed,
        init_seed,
        test_accuracy,
        best_epoch,
        best_test_accuracy: if curve.is_empty() { test_accuracy } else { best_test_accuracy },
        trainable_param_count: model.num_trainable(),
        curve,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((model, result))
}

fn split_nodes(split: &DataSplit) -> Vec<usize> {
    split.train_ids.iter().chain(&split.test_ids).copied().collect()
}

/// Fine-tune with the configured mode (any mode except `prompt`).
pub fn finetune(
    checkpoint: &Checkpoint,
    dataset: &DatasetBundle,
    split: &DataSplit,
    config: &FinetuneConfig,
) -> Result<(GraphControlModel<f32>, RunResult)> {
    if config.mode == Mode::Prompt {
        return Err(Error::config("finetune does not accept mode=prompt; use prompt_tune"));
    }
    let data = prepare(dataset, config, &split_nodes(split), None)?;
    run_prepared(Some(checkpoint), &data, split, config, derive_seed(config.seed, &[STREAM_INIT]))
}

/// Train prompts, zero MLPs and classifier with both encoders frozen.
pub fn prompt_tune(
    checkpoint: &Checkpoint,
    dataset: &DatasetBundle,
    split: &DataSplit,
    config: &FinetuneConfig,
) -> Result<(GraphControlModel<f32>, RunResult)> {
    let config = FinetuneConfig {
        mode: Mode::Prompt,
        ..config.clone()
    };
    let data = prepare(dataset, &config, &split_nodes(split), None)?;
    run_prepared(Some(checkpoint), &data, split, &config, derive_seed(config.seed, &[STREAM_INIT]))
}

/// Split for run `run`; few-shot draws move to derived seeds when a class
/// lacks candidates.
fn run_split(dataset: &DatasetBundle, config: &FinetuneConfig, run: usize) -> Result<DataSplit> {
    let base = config.seed.wrapping_add(run as u64);
    if config.shots == 0 {
        return make_split(&dataset.graph, config.train_fraction, base);
    }
    let mut last = None;
    for attempt in 0..SPLIT_ATTEMPTS {
        let seed = if attempt == 0 { base } else { derive_seed(base, &[attempt]) };
        match make_fewshot_split(&dataset.graph, config.shots, seed) {
            Ok(s) => return Ok(s),
            Err(Error::Data(m)) => last = Some(m),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Data(format!(
        "no {}-shot split found after {SPLIT_ATTEMPTS} seeds: {}",
        config.shots,
        last.unwrap_or_default()
    )))
}

/// `config.n_runs` runs over independent splits and initializations.
///
/// Runs execute in parallel on the current rayon pool; each run is serial,
/// so the report does not depend on the number of workers.
pub fn benchmark_prepared(
    dataset: &DatasetBundle,
    data: &PreparedData,
    checkpoint: Option<&Checkpoint>,
    config: &FinetuneConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let runs = (0..config.n_runs)
        .into_par_iter()
        .map(|r| {
            let split = run_split(dataset, config, r)?;
            let init = derive_seed(split.seed, &[STREAM_INIT]);
            run_prepared(checkpoint, data, &split, config, init).map(|(_, res)| res)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_runs(&dataset.name, config, runs))
}

/// Prepare every node once, then benchmark.
pub fn benchmark(
    dataset: &DatasetBundle,
    config: &FinetuneConfig,
    checkpoint: Option<&Checkpoint>,
    cache: Option<&Path>,
) -> Result<EvalReport> {
    config.validate()?;
    if config.mode.needs_checkpoint() && checkpoint.is_none() {
        return Err(Error::config(format!("mode {} requires a checkpoint", config.mode)));
    }
    let ids: Vec<usize> = (0..dataset.graph.num_nodes()).collect();
    let data = prepare(dataset, config, &ids, cache)?;
    benchmark_prepared(dataset, &data, checkpoint, config)
}
