//! Downstream adaptation: fine-tuning, prompt tuning, ablation modes,
//! evaluation and multi-seed benchmarking.

mod prepare;
mod profile;
mod train;

pub use profile::{profile, Profile, PROFILES};
pub use prepare::{prepare, PreparedData, PreparedNode};
pub use train::{benchmark, benchmark_prepared, build_model, evaluate, finetune, prompt_tune, run_prepared};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::sampler::SamplerParams;
use crate::spectral::DEFAULT_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Frozen encoder plus trainable copy linked by zero MLPs.
    #[serde(alias = "graphcontrol")]
    Finetune,
    /// As `Finetune` with both encoders frozen and input prompts trained.
    Prompt,
    /// Same composition, every part randomly initialized and trainable.
    Scratch,
    /// Frozen encoder and classifier; no condition branch.
    StructureOnly,
    /// Frozen encoder summed with an attribute encoder trained from scratch.
    SimpleConcat,
    /// Zero MLPs replaced by randomly initialized ones.
    NoZero,
    /// Condition built from the clamped soft kernel.
    SoftCondition,
    /// Condition branch only.
    NoFrozen,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Finetune,
        Mode::Prompt,
        Mode::Scratch,
        Mode::StructureOnly,
        Mode::SimpleConcat,
        Mode::NoZero,
        Mode::SoftCondition,
        Mode::NoFrozen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Finetune => "finetune",
            Mode::Prompt => "prompt",
            Mode::Scratch => "scratch",
            Mode::StructureOnly => "structure_only",
            Mode::SimpleConcat => "simple_concat",
            Mode::NoZero => "no_zero",
            Mode::SoftCondition => "soft_condition",
            Mode::NoFrozen => "no_frozen",
        }
    }

    /// Whether the mode feeds a condition embedding.
    pub fn uses_condition(self) -> bool {
        !matches!(self, Mode::StructureOnly | Mode::SimpleConcat)
    }

    pub fn needs_checkpoint(self) -> bool {
        self != Mode::Scratch
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "graphcontrol" {
            return Ok(Mode::Finetune);
        }
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
            Error::config(format!("mode: unknown value '{s}' (expected graphcontrol or one of {})", names.join(", ")))
        })
    }
}

/// Where node attributes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSource {
    /// Attributes stored with the dataset.
    Dataset,
    /// DeepWalk embeddings computed from the structure.
    Deepwalk,
}

impl FromStr for AttributeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(AttributeSource::Dataset),
            "deepwalk" => Ok(AttributeSource::Deepwalk),
            _ => Err(Error::config(format!("attributes: unknown value '{s}' (expected dataset or deepwalk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub walk_steps: usize,
    pub restart_rate: f64,
    pub threshold: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Seed of the per-node preprocessing walks, shared by all runs.
    pub sample_seed: u64,
    pub k: usize,
    pub train_fraction: f64,
    /// Shots per class; 0 selects the full split.
    pub shots: usize,
    pub n_runs: usize,
    pub attributes: AttributeSource,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            mode: Mode::Finetune,
            epochs: 100,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            weight_decay: 5e-4,
            momentum: 0.0,
            walk_steps: crate::sampler::DEFAULT_WALK_STEPS,
            restart_rate: crate::sampler::DEFAULT_RESTART_RATE,
            threshold: 0.17,
            batch_size: 128,
            seed: 0,
            sample_seed: 0,
            k: DEFAULT_K,
            train_fraction: 0.1,
            shots: 0,
            n_runs: 20,
            attributes: AttributeSource::Dataset,
        }
    }
}

impl FinetuneConfig {
    pub fn sampler(&self) -> SamplerParams {
        SamplerParams {
            walk_steps: self.walk_steps,
            restart_rate: self.restart_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            problems.push(format!("threshold must lie in [-1, 1], got {}", self.threshold));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.k == 0 {
            problems.push("k must be >= 1".to_string());
        }
        if self.shots == 0 && !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.n_runs == 0 {
            problems.push("n_runs must be >= 1".to_string());
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
}

/// One epoch of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Seed of the train/test split.
    pub split_seed: u64,
    /// Seed of parameter initialization and batch order.
    pub init_seed: u64,
    /// Test accuracy after the final epoch.
    pub test_accuracy: f64,
    /// 1-based epoch with the highest test accuracy (first on ties).
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub trainable_param_count: usize,
    #[serde(skip)]
    pub curve: Vec<EpochStats>,
    /// Excluded from `report.json` so reruns compare bitwise.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunResult {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,test_acc\n");
        for e in &self.curve {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.train_acc, e.test_acc));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: Mode,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub runs: Vec<RunResult>,
    pub config: FinetuneConfig,
}

impl EvalReport {
    pub fn from_runs(dataset: &str, config: &FinetuneConfig, runs: Vec<RunResult>) -> Self {
        let (mean, std) = mean_std(&runs.iter().map(|r| r.test_accuracy).collect::<Vec<_>>());
        EvalReport {
            dataset: dataset.to_string(),
            mode: config.mode,
            mean,
            std,
            runs,
            config: config.clone(),
        }
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
