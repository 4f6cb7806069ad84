use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// Four five-node components (clique, star, path, cycle) labelled by
/// component, with one-hot attributes.
fn write_fixture(dir: &Path, name: &str, features: bool) {
    fs::create_dir_all(dir).unwrap();
    let mut edges = Vec::new();
    for u in 0..5 {
        for v in u + 1..5 {
            edges.push((u, v));
        }
    }
    edges.extend((6..10).map(|v| (5, v)));
    edges.extend((10..14).map(|u| (u, u + 1)));
    edges.extend((15..20).map(|u| (u, if u == 19 { 15 } else { u + 1 })));
    let e: String = edges.iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    fs::write(dir.join("edges.tsv"), e).unwrap();
    let labels: String = (0..20).map(|i| format!("{}\n", i / 5)).collect();
    fs::write(dir.join("labels.csv"), labels).unwrap();
    if features {
        let x: String = (0..20)
            .map(|i| {
                let row: Vec<String> = (0..4).map(|j| if j == i / 5 { format!("1.{i}") } else { format!("0.0{i}") }).collect();
                row.join(",") + "\n"
            })
            .collect();
        fs::write(dir.join("features.csv"), x).unwrap();
    }
    fs::write(dir.join("meta.json"), format!(r#"{{"num_nodes": 20, "num_classes": 4, "name": "{name}"}}"#)).unwrap();
}

fn graphcontrol(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphcontrol"))
        .args(args)
        .env("GRAPHCONTROL_CACHE", cache)
        .env_remove("GRAPHCONTROL_DATA")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Workspace {
    fn new() -> Workspace {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        write_fixture(&root.join("data/toy"), "toy", true);
        Workspace { _tmp: tmp, root }
    }

    fn p(&self, rel: &str) -> std::path::PathBuf {
        self.root.join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        graphcontrol(args, &self.p("cache"))
    }

    fn pretrain(&self) -> std::path::PathBuf {
        let out = self.p("pre");
        let o = self.run(&[
            "pretrain",
            "--set",
            &format!("dataset={}", s(&self.p("data/toy"))),
            "--set",
            "batch_size=8",
            "--set",
            "epochs=2",
            "--set",
            "k=8",
            "--set",
            "walk_steps=32",
            "--out",
            s(&out),
        ]);
        ok(&o);
        out.join("checkpoint.gcc")
    }

    fn benchmark(&self, out: &str, workers: &str, extra: &[&str]) -> Output {
        let ck = self.pretrain();
        let mut args = vec![
            "benchmark".to_string(),
            "--set".into(),
            format!("dataset={}", s(&self.p("data/toy"))),
            "--set".into(),
            format!("checkpoint={}", s(&ck)),
            "--set".into(),
            "k=8".into(),
            "--set".into(),
            "epochs=3".into(),
            "--set".into(),
            "train_fraction=0.5".into(),
            "--workers".into(),
            workers.into(),
            "--out".into(),
            s(&self.p(out)).into(),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(|a| a.as_str()).collect();
        self.run(&refs)
    }
}

#[test]
fn pretrain_writes_checkpoint_and_loss() {
    let w = Workspace::new();
    let ck = w.pretrain();
    assert!(ck.is_file());
    let loss = fs::read_to_string(w.p("pre/pretrain_loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,loss"));
    assert_eq!(loss.lines().count(), 3);
    assert!(w.p("pre/config_resolved.json").is_file());
}

#[test]
fn benchmark_single_run_writes_artifacts() {
    let w = Workspace::new();
    let o = w.benchmark("bench", "2", &["--set", "n_runs=1"]);
    ok(&o);
    let report = json(&w.p("bench/report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 1);
    assert_eq!(report["std"], 0.0);
    assert!(report["runs"][0].get("wall_time").is_none());
    let seed = report["runs"][0]["split_seed"].as_u64().unwrap();
    let curve = fs::read_to_string(w.p(&format!("bench/curves/{seed}.csv"))).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,loss,train_acc,test_acc"));
    assert_eq!(curve.lines().count(), 4);
    assert!(json(&w.p("bench/timing.json"))["total_seconds"].as_f64().unwrap() >= 0.0);
    let resolved = json(&w.p("bench/config_resolved.json"));
    assert_eq!(resolved["command"], "benchmark");
    assert_eq!(resolved["settings"]["n_runs"], 1);
    assert_eq!(resolved["settings"]["epochs"], 3);
}

#[test]
fn benchmark_report_is_reproducible() {
    let w = Workspace::new();
    ok(&w.benchmark("a", "1", &["--set", "n_runs=2"]));
    ok(&w.benchmark("b", "1", &["--set", "n_runs=2"]));
    ok(&w.benchmark("c", "3", &["--set", "n_runs=2", "--set", "cache=false"]));
    let a = fs::read(w.p("a/report.json")).unwrap();
    assert_eq!(a, fs::read(w.p("b/report.json")).unwrap());
    assert_eq!(a, fs::read(w.p("c/report.json")).unwrap());
}

#[test]
fn misspelled_key_is_reported_with_suggestion() {
    let w = Workspace::new();
    let o = w.run(&["benchmark", "--set", "thresold=0.17", "--set", "epoch=3", "--out", s(&w.p("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("'thresold'") && err.contains("'threshold'"), "{err}");
    assert!(err.contains("'epoch'") && err.contains("'epochs'"), "{err}");
}

#[test]
fn config_file_sections_and_overrides() {
    let w = Workspace::new();
    write_fixture(&w.p("data/Cora_ML"), "Cora_ML", true);
    let cfg = w.p("run.cfg");
    fs::write(
        &cfg,
        format!(
            "dataset = {}\nepochs = 7\n[benchmark]\nthreshold = 0.2\nn_runs = 1\n[pretrain]\nepochs = 1\n",
            s(&w.p("data/Cora_ML"))
        ),
    )
    .unwrap();
    let out = w.p("cfgrun");
    let o = w.run(&[
        "benchmark",
        "--config",
        s(&cfg),
        "--set",
        "threshold=0.3",
        "--seed",
        "5",
        "--set",
        "mode=scratch",
        "--set",
        "epochs=1",
        "--set",
        "k=8",
        "--out",
        s(&out),
    ]);
    ok(&o);
    let r = &json(&out.join("config_resolved.json"))["settings"];
    assert_eq!(r["threshold"], 0.3);
    assert_eq!(r["seed"], 5);
    assert_eq!(r["epochs"], 1);
    assert_eq!(r["n_runs"], 1);
    assert_eq!(r["learning_rate"], 0.5);
    assert_eq!(r["optimizer"], "adamw");
    assert_eq!(json(&out.join("report.json"))["runs"][0]["split_seed"], 5);
}

#[test]
fn unknown_section_and_key_in_file_listed_together() {
    let w = Workspace::new();
    let cfg = w.p("bad.cfg");
    fs::write(&cfg, "thresold = 0.2\n[bench]\nx = 1\n[pretrain]\nthreshold = 0.1\n").unwrap();
    let o = w.run(&["gradcheck", "--config", s(&cfg), "--out", s(&w.p("g"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("thresold") && err.contains("[bench]") && err.contains("'threshold'"), "{err}");
}

#[test]
fn gradcheck_prints_error_and_honours_tolerance() {
    let w = Workspace::new();
    let o = w.run(&["gradcheck", "--out", s(&w.p("g"))]);
    ok(&o);
    let out = String::from_utf8_lossy(&o.stdout);
    let line = out.lines().find(|l| l.starts_with("max relative error:")).unwrap();
    let err: f64 = line.split(':').nth(1).unwrap().trim().parse().unwrap();
    assert!(err <= 1e-4, "{out}");
    let strict = w.run(&["gradcheck", "--set", "tolerance=0", "--out", s(&w.p("g0"))]);
    assert_eq!(strict.status.code(), Some(4));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let w = Workspace::new();
    let o = w.run(&["pretrain", "--set", "dataset=nowhere", "--out", s(&w.p("m"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = w.run(&["pretrain", "--out", s(&w.p("m"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_names_resolve_under_data_dir() {
    let w = Workspace::new();
    let o = w.run(&[
        "embed",
        "--set",
        "dataset=TOY",
        "--set",
        &format!("data_dir={}", s(&w.p("data"))),
        "--set",
        "dim=8",
        "--set",
        "epochs=1",
        "--out",
        s(&w.p("emb")),
    ]);
    ok(&o);
    let x = fs::read_to_string(w.p("emb/features.csv")).unwrap();
    assert_eq!(x.lines().count(), 20);
    assert_eq!(x.lines().next().unwrap().split(',').count(), 8);
    assert_eq!(fs::read_to_string(w.p("emb/labels.csv")).unwrap(), fs::read_to_string(w.p("data/toy/labels.csv")).unwrap());
}

#[test]
fn convert_edge_list() {
    let w = Workspace::new();
    fs::write(w.p("g.edges"), "# comment\na b\nb c\nc a\nc d\n").unwrap();
    fs::write(w.p("g.labels"), "node label\na 1\nb 1\nc 2\nd 2\n").unwrap();
    let o = w.run(&[
        "convert",
        "--set",
        &format!("input={}", s(&w.p("g.edges"))),
        "--set",
        &format!("labels={}", s(&w.p("g.labels"))),
        "--out",
        s(&w.p("conv")),
    ]);
    ok(&o);
    let meta = json(&w.p("conv/meta.json"));
    assert_eq!(meta["num_nodes"], 4);
    assert_eq!(meta["num_classes"], 2);
    assert_eq!(meta["name"], "g");
    assert_eq!(fs::read_to_string(w.p("conv/edges.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn prepare_fills_cache() {
    let w = Workspace::new();
    let o = w.run(&["prepare", "--set", &format!("dataset={}", s(&w.p("data/toy"))), "--set", "k=8", "--out", s(&w.p("prep"))]);
    ok(&o);
    let files = walk(&w.p("cache"));
    assert_eq!(files.iter().filter(|f| f.ends_with(".pe")).count(), 20);
    assert_eq!(files.iter().filter(|f| f.ends_with(".ce")).count(), 20);
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.display().to_string());
        }
    }
    out
}

#[test]
fn adapt_commands_check_mode_and_checkpoint() {
    let w = Workspace::new();
    let ck = w.pretrain();
    let data = format!("dataset={}", s(&w.p("data/toy")));
    let o = w.run(&["prompt-tune", "--set", &data, "--set", "mode=finetune", "--out", s(&w.p("pt"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = w.run(&["finetune", "--set", &data, "--set", "k=8", "--out", s(&w.p("ft"))]);
    assert_eq!(o.status.code(), Some(2), "checkpoint is required");
    let ckset = format!("checkpoint={}", s(&ck));
    let o = w.run(&[
        "prompt-tune", "--set", &data, "--set", &ckset, "--set", "k=8", "--set", "epochs=2", "--set", "train_fraction=0.5", "--out",
        s(&w.p("pt")),
    ]);
    ok(&o);
    let report = json(&w.p("pt/report.json"));
    assert_eq!(report["mode"], "prompt");
    assert_eq!(report["runs"].as_array().unwrap().len(), 1);
    let o = w.run(&[
        "finetune", "--set", &data, "--set", &ckset, "--set", "k=8", "--set", "epochs=2", "--set", "train_fraction=0.5", "--out",
        s(&w.p("ft")),
    ]);
    ok(&o);
    assert_eq!(json(&w.p("ft/report.json"))["mode"], "finetune");
    let o = w.run(&["finetune", "--set", &data, "--set", &ckset, "--set", "k=16", "--set", "epochs=1", "--out", s(&w.p("ft2"))]);
    assert_eq!(o.status.code(), Some(3), "checkpoint dims mismatch");
}
