//! `graphcontrol` command-line front end.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use graphcontrol::adapt::{self, profile, EvalReport, FinetuneConfig, Mode};
use graphcontrol::cache::cache_root;
use graphcontrol::condition::{deepwalk_embed, DeepWalkParams};
use graphcontrol::graph::{convert_edge_list, convert_npz, find_dataset, save_dataset, DatasetBundle, EdgeListSource, Topology};
use graphcontrol::nn::{gradient_suite, SuiteDims};
use graphcontrol::pretrain::{pretrain, Checkpoint, PretrainConfig};
use graphcontrol::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::{check_file, parse_override, ConfigFile, Entry, Settings};

#[derive(Debug, Parser)]
#[command(name = "graphcontrol", version, about = "Structural pre-training and conditional adaptation of graph encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (flat key = value, one [section] per subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: runs/<subcommand>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Seed; same as --set seed=S.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Convert an edge list or .npz archive into the native dataset layout.
    Convert,
    /// Fill the preprocessing cache (subgraphs, embeddings, conditions).
    Prepare,
    /// Compute DeepWalk attributes and write an attributed dataset.
    Embed,
    /// Structural pre-training; writes a checkpoint and the loss curve.
    Pretrain,
    /// Fine-tune a checkpoint on a downstream dataset.
    Finetune,
    /// Prompt-tune a checkpoint with both encoders frozen.
    PromptTune,
    /// Repeated runs over independent seeds with a summary report.
    Benchmark,
    /// Finite-difference check of every gradient.
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Convert,
        Command::Prepare,
        Command::Embed,
        Command::Pretrain,
        Command::Finetune,
        Command::PromptTune,
        Command::Benchmark,
        Command::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Convert => "convert",
            Command::Prepare => "prepare",
            Command::Embed => "embed",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::PromptTune => "prompt-tune",
            Command::Benchmark => "benchmark",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataArgs {
    /// Dataset directory, or a name under `data_dir` / `$GRAPHCONTROL_DATA`.
    dataset: Option<String>,
    data_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunArgs {
    /// `auto` (by dataset name), `none`, or a profile name.
    profile: String,
    /// Use the on-disk preprocessing cache.
    cache: bool,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            profile: "auto".into(),
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointArgs {
    checkpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvertArgs {
    input: Option<String>,
    /// Optional `node label` file for edge lists.
    labels: Option<String>,
    /// `auto`, `edgelist` or `npz`.
    format: String,
    name: Option<String>,
}

impl Default for ConvertArgs {
    fn default() -> Self {
        ConvertArgs {
            input: None,
            labels: None,
            format: "auto".into(),
            name: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckArgs {
    tolerance: f64,
    seed: u64,
    k: usize,
    width: usize,
    classes: usize,
    attr_dim: usize,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        let d = SuiteDims::default();
        GradcheckArgs {
            tolerance: 1e-4,
            seed: 0,
            k: d.k,
            width: d.width,
            classes: d.classes,
            attr_dim: d.attr_dim,
        }
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("settings serialize")
}

fn finetune_defaults(cmd: Command) -> FinetuneConfig {
    match cmd {
        Command::Finetune => FinetuneConfig {
            n_runs: 1,
            ..FinetuneConfig::default()
        },
        Command::PromptTune => FinetuneConfig {
            n_runs: 1,
            mode: Mode::Prompt,
            ..FinetuneConfig::default()
        },
        _ => FinetuneConfig::default(),
    }
}

/// Default settings of `cmd`, with `ft` as the fine-tuning part.
fn schema_with(cmd: Command, ft: &FinetuneConfig) -> Settings {
    let data = to_value(&DataArgs::default());
    let run = to_value(&RunArgs::default());
    let parts = match cmd {
        Command::Convert => vec![to_value(&ConvertArgs::default())],
        Command::Embed => vec![data, to_value(&DeepWalkParams::default())],
        Command::Prepare => vec![data, run, to_value(ft)],
        Command::Pretrain => vec![data, to_value(&PretrainConfig::default())],
        Command::Finetune | Command::PromptTune | Command::Benchmark => {
            vec![data, run, to_value(&CheckpointArgs::default()), to_value(ft)]
        }
        Command::Gradcheck => vec![to_value(&GradcheckArgs::default())],
    };
    Settings::new(parts)
}

fn schema(cmd: Command) -> Settings {
    schema_with(cmd, &finetune_defaults(cmd))
}

fn last_value<'a>(entries: &'a [Entry], key: &str) -> Option<&'a str> {
    entries.iter().rev().find(|e| e.key == key).map(|e| e.value.as_str())
}

/// Profile defaults selected by the `profile` and `dataset` entries.
fn profiled_defaults(cmd: Command, entries: &[Entry]) -> Result<FinetuneConfig, Error> {
    let mut ft = finetune_defaults(cmd);
    let chosen = last_value(entries, "profile").unwrap_or("auto");
    let dataset = last_value(entries, "dataset").map(|d| {
        Path::new(d.trim_end_matches('/'))
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let p = match chosen {
        "none" => None,
        "auto" => dataset.as_deref().and_then(profile),
        name => Some(profile(name).ok_or_else(|| {
            let names: Vec<&str> = adapt::PROFILES.iter().map(|p| p.name).collect();
            Error::Config(vec![format!("unknown profile '{name}' (expected auto, none or one of {})", names.join(", "))])
        })?),
    };
    if let Some(p) = p {
        p.apply(&mut ft);
    }
    Ok(ft)
}

/// Effective settings of `cmd` from the config file and command line.
pub fn resolve(cmd: Command, file: Option<&ConfigFile>, sets: &[String], seed: Option<u64>) -> Result<Settings, Error> {
    let known = schema(cmd).keys();
    let mut entries = Vec::new();
    if let Some(f) = file {
        let schemas: BTreeMap<&str, _> = Command::ALL.iter().map(|c| (c.name(), schema(*c).keys())).collect();
        check_file(f, &schemas)?;
        entries.extend(f.global.iter().filter(|e| known.contains(&e.key)).cloned());
        entries.extend(f.sections.get(cmd.name()).into_iter().flatten().cloned());
    }
    let mut problems = Vec::new();
    for s in sets {
        match parse_override(s) {
            Ok(e) => entries.push(e),
            Err(Error::Config(p)) => problems.extend(p),
            Err(e) => return Err(e),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if let Some(s) = seed {
        if known.contains("seed") {
            entries.push(Entry {
                key: "seed".into(),
                value: s.to_string(),
                origin: "--seed".into(),
            });
        }
    }
    let ft = match cmd {
        Command::Prepare | Command::Finetune | Command::PromptTune | Command::Benchmark => profiled_defaults(cmd, &entries)?,
        _ => finetune_defaults(cmd),
    };
    let mut settings = schema_with(cmd, &ft);
    settings.apply(&entries)?;
    Ok(settings)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    write(path, text)
}

fn load_data(settings: &Settings) -> Result<DatasetBundle, Error> {
    let data: DataArgs = settings.part(0)?;
    let spec = data
        .dataset
        .ok_or_else(|| Error::Config(vec!["dataset is required (set dataset = <name or directory>)".into()]))?;
    find_dataset(&spec, data.data_dir.as_deref().map(Path::new))
}

fn load_checkpoint(settings: &Settings) -> Result<Option<Checkpoint>, Error> {
    let args: CheckpointArgs = settings.part(2)?;
    args.checkpoint.map(|p| Checkpoint::load(Path::new(&p))).transpose()
}

fn write_report(out: &Path, report: &EvalReport, seconds: f64) -> Result<(), Error> {
    write_json(&out.join("report.json"), report)?;
    for run in &report.runs {
        write(&out.join("curves").join(format!("{}.csv", run.split_seed)), run.curve_csv())?;
    }
    let runs: Vec<Value> = report
        .runs
        .iter()
        .map(|r| json!({"split_seed": r.split_seed, "wall_time": r.wall_time}))
        .collect();
    write_json(&out.join("timing.json"), &json!({"total_seconds": seconds, "runs": runs}))?;
    println!(
        "{} on {}: mean {:.4} +/- {:.4} over {} run(s)",
        report.mode,
        report.dataset,
        report.mean,
        report.std,
        report.runs.len()
    );
    Ok(())
}

fn run_convert(settings: &Settings, out: &Path) -> Result<(), Error> {
    let args: ConvertArgs = settings.part(0)?;
    let input = args
        .input
        .ok_or_else(|| Error::Config(vec!["input is required (set input = <edge list or .npz>)".into()]))?;
    let path = PathBuf::from(&input);
    let name = args.name.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let format = match args.format.as_str() {
        "auto" if path.extension().is_some_and(|e| e == "npz") => "npz",
        "auto" => "edgelist",
        f => f,
    };
    let bundle = match format {
        "npz" => convert_npz(&path, &name)?,
        "edgelist" => convert_edge_list(&EdgeListSource {
            edges: path,
            labels: args.labels.map(PathBuf::from),
            name,
        })?,
        other => return Err(Error::Config(vec![format!("format: unknown value '{other}' (expected auto, edgelist or npz)")])),
    };
    save_dataset(&bundle, out)?;
    println!(
        "wrote {} ({} nodes, {} edges) to {}",
        bundle.name,
        bundle.graph.num_nodes(),
        bundle.graph.num_edges(),
        out.display()
    );
    Ok(())
}

fn run_embed(settings: &Settings, out: &Path) -> Result<(), Error> {
    let dataset = load_data(settings)?;
    let params: DeepWalkParams = settings.part(1)?;
    let x = deepwalk_embed(&dataset.graph.structure(), &params)?;
    let graph = dataset.graph.clone().without_attributes().with_attributes(x)?;
    save_dataset(&DatasetBundle::new(graph, dataset.name.clone()), out)?;
    println!("wrote {}-dimensional attributes for {} to {}", params.dim, dataset.name, out.display());
    Ok(())
}

fn run_prepare(settings: &Settings) -> Result<(), Error> {
    let dataset = load_data(settings)?;
    let config: FinetuneConfig = settings.part(2)?;
    config.validate()?;
    let root = cache_root();
    let ids: Vec<usize> = (0..dataset.graph.num_nodes()).collect();
    adapt::prepare(&dataset, &config, &ids, Some(&root))?;
    println!("prepared {} nodes of {} in {}", ids.len(), dataset.name, root.display());
    Ok(())
}

fn run_pretrain(settings: &Settings, out: &Path) -> Result<(), Error> {
    let dataset = load_data(settings)?;
    let config: PretrainConfig = settings.part(1)?;
    let start = Instant::now();
    let result = pretrain(&dataset.graph.structure(), &config, &dataset.name)?;
    fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
    result.checkpoint.save(&out.join("checkpoint.gcc"))?;
    result.write_loss_csv(&out.join("pretrain_loss.csv"))?;
    write_json(&out.join("timing.json"), &json!({"total_seconds": start.elapsed().as_secs_f64()}))?;
    println!(
        "pre-trained on {} for {} epochs; final loss {:.4}",
        dataset.name,
        config.epochs,
        result.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_adapt(cmd: Command, settings: &Settings, out: &Path) -> Result<(), Error> {
    let config: FinetuneConfig = settings.part(3)?;
    match (cmd, config.mode) {
        (Command::PromptTune, m) if m != Mode::Prompt => {
            return Err(Error::Config(vec![format!("prompt-tune runs mode=prompt, got mode={m}")]))
        }
        (Command::Finetune, Mode::Prompt) => {
            return Err(Error::Config(vec!["finetune does not run mode=prompt; use prompt-tune".into()]))
        }
        _ => {}
    }
    config.validate()?;
    let run: RunArgs = settings.part(1)?;
    let checkpoint = load_checkpoint(settings)?;
    if config.mode.needs_checkpoint() && checkpoint.is_none() {
        return Err(Error::Config(vec![format!("mode {} requires checkpoint = <path>", config.mode)]));
    }
    let dataset = load_data(settings)?;
    let start = Instant::now();
    let cache = run.cache.then(cache_root);
    let report = adapt::benchmark(&dataset, &config, checkpoint.as_ref(), cache.as_deref())?;
    write_report(out, &report, start.elapsed().as_secs_f64())
}

fn run_gradcheck(settings: &Settings, out: &Path) -> Result<(), Error> {
    let args: GradcheckArgs = settings.part(0)?;
    let dims = SuiteDims {
        k: args.k,
        width: args.width,
        classes: args.classes,
        attr_dim: args.attr_dim,
    };
    let reports = gradient_suite(args.seed, dims)?;
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (name, r) in &reports {
        println!(
            "{name:<22} max relative error {:.3e}  ({} entries, {} on kinks)",
            r.max_relative_error, r.entries, r.kinks
        );
        worst = worst.max(r.max_relative_error);
        if !r.passes(args.tolerance) {
            failed.push(name.clone());
        }
    }
    println!("max relative error: {worst:.3e}");
    let json_reports: BTreeMap<&str, _> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_json(&out.join("gradcheck.json"), &json!({"max_relative_error": worst, "tolerance": args.tolerance, "cases": json_reports}))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check above tolerance {:e} in: {}",
            args.tolerance,
            failed.join(", ")
        )))
    }
}

/// Resolve settings, record them and run the subcommand.
pub fn run(cli: &Cli) -> Result<(), Error> {
    let cmd = cli.command;
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let settings = resolve(cmd, file.as_ref(), &cli.set, cli.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(cmd.name()));
    write_json(
        &out.join("config_resolved.json"),
        &json!({"command": cmd.name(), "settings": settings.resolved()}),
    )?;
    match cmd {
        Command::Convert => run_convert(&settings, &out),
        Command::Embed => run_embed(&settings, &out),
        Command::Prepare => run_prepare(&settings),
        Command::Pretrain => run_pretrain(&settings, &out),
        Command::Finetune | Command::PromptTune | Command::Benchmark => run_adapt(cmd, &settings, &out),
        Command::Gradcheck => run_gradcheck(&settings, &out),
    }
}

/// Parse arguments, run on a pool of `--workers` threads and return the
/// process exit status.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 4;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
