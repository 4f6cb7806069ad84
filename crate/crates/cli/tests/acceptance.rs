//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1-4 and 10 run offline. Criteria 5-9 need the Cora_ML and
//! Europe-Airport datasets in the native layout under `$GRAPHCONTROL_DATA`;
//! without them they report FAIL with the reason. The exit status covers the
//! offline criteria, and every criterion when `GRAPHCONTROL_ACCEPTANCE_STRICT`
//! is set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use graphcontrol::adapt::{benchmark, profile, AttributeSource, EvalReport, FinetuneConfig, Mode};
use graphcontrol::condition::{cosine_kernel, discretize};
use graphcontrol::graph::{find_dataset, DatasetBundle, Graph, Topology};
use graphcontrol::nn::{gin_forward, gradient_suite, graphcontrol_forward, readout, GinEncoder, GraphControlModel, Params, SuiteDims};
use graphcontrol::pretrain::{pretrain, Checkpoint, PretrainConfig};
use graphcontrol::rng::Rng64;
use graphcontrol::sampler::{induce_subgraph, Subgraph};
use graphcontrol::spectral::{normalized_laplacian, positional_embedding};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_graph(n: usize, p: f64, rng: &mut Rng64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

fn whole(g: &Graph) -> Subgraph {
    induce_subgraph(g, &(0..g.num_nodes()).collect::<Vec<_>>(), 0).unwrap()
}

fn random_matrix(r: usize, c: usize, rng: &mut Rng64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn zero_init_identity() -> Outcome {
    let mut rng = Rng64::seed_from_u64(1);
    let k = 32;
    let frozen = GinEncoder::<f64>::new(k, 64, 4, &mut rng);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(10..=50);
        let g = random_graph(n, 4.0 / n as f64, &mut rng);
        let sub = whole(&g);
        let mut model = GraphControlModel::new(&frozen, 4, &mut rng);
        for p in model.copy.as_mut().unwrap().params_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let pos = random_matrix(n, k, &mut rng);
        let cond = random_matrix(n, k, &mut rng);
        let h = graphcontrol_forward(&model, &sub, pos.view(), cond.view()).unwrap();
        let reference = readout(gin_forward(&frozen, &sub, pos.view()).unwrap().view()).unwrap();
        worst = h.iter().zip(&reference).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    outcome(worst == 0.0, format!("100 random copies on 10-50 node subgraphs, max |diff| = {worst:e}"))
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    let mut cases = 0;
    for seed in 0..2 {
        for (name, r) in gradient_suite(seed, SuiteDims::default()).unwrap() {
            cases += 1;
            worst = worst.max(r.max_relative_error);
            if !r.passes(1e-4) {
                failed.push(format!("{name}(seed {seed}, err {:.2e}, kinks {}/{})", r.max_relative_error, r.kinks, r.entries));
            }
        }
    }
    outcome(
        failed.is_empty(),
        format!("{cases} cases, max relative error {worst:.2e} (tol 1e-4) {}", failed.join(" ")),
    )
}

fn kernel_oracle(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let norm = |i: usize| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (norm(i), norm(j));
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        let mut dot = 0.0;
        for c in 0..x.ncols() {
            dot += x[(i, c)] * x[(j, c)];
        }
        dot / (a * b)
    })
}

fn laplacian_oracle(g: &Graph) -> Array2<f64> {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|u| g.degree(u) as f64).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
        let off = if a == 0.0 { 0.0 } else { a / (deg[i] * deg[j]).sqrt() };
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

fn oracle_equivalence() -> Outcome {
    let mut rng = Rng64::seed_from_u64(3);
    let mut problems = Vec::new();
    let (mut k_err, mut l_err, mut r_err) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..50 {
        let mut x = random_matrix(rng.random_range(2..=12), rng.random_range(1..=6), &mut rng);
        if case % 5 == 0 {
            x.row_mut(0).fill(0.0);
        }
        let k = cosine_kernel(x.view()).unwrap();
        k_err = k_err.max(max_abs_diff(&k.matrix, &kernel_oracle(&x)));

        let v = rng.random_range(-0.5..0.8);
        let a = discretize(&k, v).unwrap();
        let n = k.matrix.nrows();
        let expect = Array2::from_shape_fn((n, n), |(i, j)| if i == j || k.matrix[(i, j)] > v { 1.0 } else { 0.0 });
        if a.matrix != expect {
            problems.push(format!("discretize case {case}"));
        }

        let g = random_graph(rng.random_range(2..=12), 0.3, &mut rng);
        l_err = l_err.max(max_abs_diff(&normalized_laplacian(&g), &laplacian_oracle(&g)));

        let g = random_graph(30, 0.15, &mut rng);
        let mut nodes: Vec<usize> = (0..30).filter(|_| rng.random_bool(0.4)).collect();
        if nodes.is_empty() {
            nodes.push(0);
        }
        let sub = induce_subgraph(&g, &nodes, nodes[0]).unwrap();
        let got: BTreeSet<(usize, usize)> = sub
            .local_edges()
            .into_iter()
            .map(|(a, b)| {
                let (u, v) = (sub.node_ids[a], sub.node_ids[b]);
                (u.min(v), u.max(v))
            })
            .collect();
        let keep: BTreeSet<usize> = nodes.iter().copied().collect();
        let want: BTreeSet<(usize, usize)> = g
            .edge_list()
            .into_iter()
            .filter(|(u, v)| keep.contains(u) && keep.contains(v))
            .collect();
        if got != want || sub.node_ids.iter().copied().collect::<BTreeSet<_>>() != keep {
            problems.push(format!("induce_subgraph case {case}"));
        }

        let h = random_matrix(7, 1 + case % 9, &mut rng);
        let means = Array1::from_shape_fn(h.ncols(), |c| (0..7).map(|r| h[(r, c)]).sum::<f64>() / 7.0);
        let got = readout(h.view()).unwrap();
        r_err = r_err.max(got.iter().zip(&means).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
    }
    for (name, err) in [("cosine_kernel", k_err), ("normalized_laplacian", l_err), ("readout", r_err)] {
        if err > 1e-12 {
            problems.push(format!("{name} error {err:e}"));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "50 instances each; kernel {k_err:.1e}, laplacian {l_err:.1e}, readout {r_err:.1e} (tol 1e-12), discretize/induce exact {}",
            problems.join(", ")
        ),
    )
}

/// Cyclic Jacobi eigenvalue iteration.
fn jacobi(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

fn spectral_correctness() -> Outcome {
    let mut rng = Rng64::seed_from_u64(4);
    let (mut residual, mut range_ok, mut oracle_gap) = (0.0f64, true, 0.0f64);
    for _ in 0..20 {
        let g = random_graph(20, 0.2, &mut rng);
        let l = normalized_laplacian(&g);
        let pe = positional_embedding(&g, 20).unwrap();
        for (j, &lambda) in pe.eigenvalues.iter().enumerate() {
            range_ok &= (-1e-10..=2.0 + 1e-10).contains(&lambda);
            let u = pe.matrix.column(j);
            let lu = l.dot(&u);
            residual = lu.iter().zip(u.iter()).fold(residual, |m, (a, b)| m.max((a - lambda * b).abs()));
        }
        let (mut reference, _) = jacobi(l);
        reference.sort_by(f64::total_cmp);
        oracle_gap = reference.iter().zip(&pe.eigenvalues).fold(oracle_gap, |m, (a, b)| m.max((a - b).abs()));
    }
    let p3 = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let pe = positional_embedding(&p3, 3).unwrap();
    let (mut oracle, vectors) = jacobi(normalized_laplacian(&p3));
    let zero = (0..3).min_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
    let v0: Vec<f64> = vectors.column(zero).iter().map(|x| x.abs()).collect();
    let expected = [1.0, 2f64.sqrt(), 1.0].map(|x| x / 2.0);
    let v0_gap = v0.iter().zip(expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    oracle.sort_by(f64::total_cmp);
    let p3_gap = [0.0, 1.0, 2.0]
        .iter()
        .zip(&pe.eigenvalues)
        .zip(&oracle)
        .fold(0.0f64, |m, ((t, a), b)| m.max((t - a).abs()).max((t - b).abs()));
    let pe0_gap = pe.matrix.column(0).iter().zip(expected).fold(0.0f64, |m, (a, b)| m.max((a.abs() - b).abs()));
    let pass = residual <= 1e-8 && range_ok && oracle_gap <= 1e-8 && p3_gap <= 1e-10 && v0_gap <= 1e-10 && pe0_gap <= 1e-10;
    outcome(
        pass,
        format!(
            "residual {residual:.1e} (tol 1e-8), eigenvalues in [0,2]: {range_ok}, vs Jacobi {oracle_gap:.1e}, P3 spectrum gap {p3_gap:.1e}, P3 null vector gap {:.1e}",
            v0_gap.max(pe0_gap)
        ),
    )
}

fn write_fixture(dir: &Path) {
    let mut rng = Rng64::seed_from_u64(10);
    let n = 60;
    let mut edges = String::new();
    for u in 0..n {
        for v in u + 1..n {
            let same = (u % 3) == (v % 3);
            if rng.random_bool(if same { 0.2 } else { 0.02 }) {
                edges.push_str(&format!("{u}\t{v}\n"));
            }
        }
    }
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("edges.tsv"), edges).unwrap();
    let labels: String = (0..n).map(|i| format!("{}\n", i % 3)).collect();
    fs::write(dir.join("labels.csv"), labels).unwrap();
    let x: String = (0..n)
        .map(|i| {
            let row: Vec<String> = (0..5)
                .map(|j| format!("{}", if j == i % 3 { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3)))
                .collect();
            row.join(",") + "\n"
        })
        .collect();
    fs::write(dir.join("features.csv"), x).unwrap();
    fs::write(dir.join("meta.json"), r#"{"num_nodes": 60, "num_classes": 3, "name": "fixture"}"#).unwrap();
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_fixture(&root.join("data"));
    let bin = env!("CARGO_BIN_EXE_graphcontrol");
    let run = |args: &[String]| {
        let o = Command::new(bin).args(args).env("GRAPHCONTROL_CACHE", root.join("cache")).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let s = |p: &Path| p.display().to_string();
    let data = format!("dataset={}", s(&root.join("data")));
    run(&[
        "pretrain".into(),
        "--set".into(),
        data.clone(),
        "--set".into(),
        "epochs=3".into(),
        "--set".into(),
        "batch_size=16".into(),
        "--set".into(),
        "k=16".into(),
        "--workers".into(),
        "1".into(),
        "--out".into(),
        s(&root.join("pre")),
    ]);
    let bench = |out: &str| {
        run(&[
            "benchmark".into(),
            "--set".into(),
            data.clone(),
            "--set".into(),
            format!("checkpoint={}", s(&root.join("pre/checkpoint.gcc"))),
            "--set".into(),
            "k=16".into(),
            "--set".into(),
            "epochs=10".into(),
            "--set".into(),
            "n_runs=3".into(),
            "--set".into(),
            "train_fraction=0.3".into(),
            "--workers".into(),
            "1".into(),
            "--out".into(),
            s(&root.join(out)),
        ]);
        fs::read(root.join(out).join("report.json")).unwrap()
    };
    let (a, b) = (bench("first"), bench("second"));
    outcome(a == b, format!("two --workers 1 benchmark runs, report.json {} bytes, identical: {}", a.len(), a == b))
}

struct RealData {
    cora: DatasetBundle,
    checkpoint: Checkpoint,
}

fn load_any(names: &[&str]) -> Result<DatasetBundle, String> {
    let mut last = String::new();
    for n in names {
        match find_dataset(n, None) {
            Ok(d) => return Ok(d),
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

fn cora_config(mode: Mode, seeds: usize) -> FinetuneConfig {
    let mut c = FinetuneConfig {
        mode,
        n_runs: seeds,
        ..FinetuneConfig::default()
    };
    profile("Cora_ML").unwrap().apply(&mut c);
    c
}

fn run(data: &DatasetBundle, config: &FinetuneConfig, checkpoint: &Checkpoint) -> Result<EvalReport, String> {
    benchmark(data, config, Some(checkpoint), None).map_err(|e| e.to_string())
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn main() {
    let strict = std::env::var_os("GRAPHCONTROL_ACCEPTANCE_STRICT").is_some();
    let mut offline_failures = 0;
    let mut data_failures = 0;
    let mut report = |id: usize, name: &str, budget: Option<Duration>, offline: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        println!(
            "{} criterion {id}: {name} - {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        if !o.pass {
            if offline {
                offline_failures += 1;
            } else {
                data_failures += 1;
            }
        }
    };

    report(1, "zero-init identity", Some(Duration::from_secs(10)), true, &mut zero_init_identity);
    report(2, "gradient suite", Some(Duration::from_secs(120)), true, &mut gradient_check);
    report(3, "oracle equivalence", Some(Duration::from_secs(30)), true, &mut oracle_equivalence);
    report(4, "spectral correctness", Some(Duration::from_secs(10)), true, &mut spectral_correctness);

    let real: Result<RealData, String> = load_any(&["Cora_ML", "cora_ml", "cora-ml"]).and_then(|cora| {
        let config = PretrainConfig {
            epochs: 100,
            ..PretrainConfig::default()
        };
        let out = pretrain(&cora.graph.structure(), &config, &cora.name).map_err(|e| e.to_string())?;
        Ok(RealData {
            cora,
            checkpoint: out.checkpoint,
        })
    });
    let unavailable = |e: &str| outcome(false, format!("Cora_ML unavailable: {e}"));

    let mut gc_runs: Option<EvalReport> = None;
    report(5, "headline reproduction on Cora_ML", Some(Duration::from_secs(45 * 60)), false, &mut || match &real {
        Err(e) => unavailable(e),
        Ok(r) => {
            let gc = run(&r.cora, &cora_config(Mode::Finetune, 10), &r.checkpoint);
            let so = run(&r.cora, &cora_config(Mode::StructureOnly, 10), &r.checkpoint);
            match (gc, so) {
                (Ok(gc), Ok(so)) => {
                    let pass = gc.mean >= 0.65 && so.mean <= 0.45 && gc.mean - so.mean >= 0.20;
                    let detail = format!("graphcontrol {} vs structure_only {} (need >= 65, <= 45, gap >= 20)", pct(gc.mean), pct(so.mean));
                    gc_runs = Some(gc);
                    outcome(pass, detail)
                }
                (Err(e), _) | (_, Err(e)) => outcome(false, e),
            }
        }
    });
    report(6, "ablation direction on Cora_ML", None, false, &mut || match (&real, &gc_runs) {
        (Err(e), _) => unavailable(e),
        (Ok(_), None) => outcome(false, "graphcontrol runs of criterion 5 unavailable"),
        (Ok(r), Some(gc)) => {
            let nz = run(&r.cora, &cora_config(Mode::NoZero, 10), &r.checkpoint);
            let sc = run(&r.cora, &cora_config(Mode::SimpleConcat, 10), &r.checkpoint);
            match (nz, sc) {
                (Ok(nz), Ok(sc)) => outcome(
                    gc.mean - nz.mean >= 0.03 && gc.mean - sc.mean >= 0.05,
                    format!(
                        "graphcontrol {} vs no_zero {} (need +3) vs simple_concat {} (need +5)",
                        pct(gc.mean),
                        pct(nz.mean),
                        pct(sc.mean)
                    ),
                ),
                (Err(e), _) | (_, Err(e)) => outcome(false, e),
            }
        }
    });
    report(7, "few-shot prompt tuning on Europe-Airport", Some(Duration::from_secs(600)), false, &mut || {
        let europe = match load_any(&["Europe", "Europe-Airport", "europe-airport", "europe_airport"]) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("Europe-Airport unavailable: {e}")),
        };
        let r = match &real {
            Ok(r) => r,
            Err(e) => return unavailable(e),
        };
        let config = |mode| {
            let mut c = FinetuneConfig {
                mode,
                shots: 5,
                n_runs: 20,
                attributes: AttributeSource::Deepwalk,
                ..FinetuneConfig::default()
            };
            profile("Europe").unwrap().apply(&mut c);
            c
        };
        match (run(&europe, &config(Mode::Prompt), &r.checkpoint), run(&europe, &config(Mode::Finetune), &r.checkpoint)) {
            (Ok(pt), Ok(ft)) => {
                let (pp, fp) = (pt.runs[0].trainable_param_count, ft.runs[0].trainable_param_count);
                let ratio = pp as f64 / fp as f64;
                outcome(
                    pt.mean >= ft.mean - 0.02 && ratio < 0.10,
                    format!(
                        "prompt {} vs finetune {} (need >= finetune - 2); {pp} vs {fp} trainable parameters = {:.1}% (need < 10%)",
                        pct(pt.mean),
                        pct(ft.mean),
                        100.0 * ratio
                    ),
                )
            }
            (Err(e), _) | (_, Err(e)) => outcome(false, e),
        }
    });
    report(8, "convergence within 100 epochs", None, false, &mut || match &gc_runs {
        None => outcome(false, "criterion 5 runs unavailable"),
        Some(gc) => {
            let within = gc.runs.iter().filter(|r| r.best_epoch <= 100).count();
            outcome(within >= 8, format!("best epoch <= 100 in {within}/{} seeds (need >= 8)", gc.runs.len()))
        }
    });
    report(9, "threshold sensitivity on Cora_ML", None, false, &mut || match &real {
        Err(e) => unavailable(e),
        Ok(r) => {
            let at = |v: f64| {
                let c = FinetuneConfig {
                    threshold: v,
                    ..cora_config(Mode::Finetune, 5)
                };
                run(&r.cora, &c, &r.checkpoint)
            };
            match (at(0.17), at(0.35)) {
                (Ok(lo), Ok(hi)) => outcome(
                    lo.mean - hi.mean >= 0.05,
                    format!("v=0.17 {} vs v=0.35 {} (need a drop >= 5)", pct(lo.mean), pct(hi.mean)),
                ),
                (Err(e), _) | (_, Err(e)) => outcome(false, e),
            }
        }
    });
    report(10, "bit-identical rerun", None, true, &mut determinism);

    println!(
        "{offline_failures} offline and {data_failures} data-dependent criteria failed{}",
        if strict { " (strict)" } else { "" }
    );
    if offline_failures > 0 || (strict && data_failures > 0) {
        std::process::exit(1);
    }
}
