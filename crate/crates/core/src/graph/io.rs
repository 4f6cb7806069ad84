use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Graph};
use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.json";

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub name: String,
}

/// Environment variable naming the root of the dataset directories.
pub const DATA_ENV: &str = "GRAPHCONTROL_DATA";

/// Resolve a dataset given as a directory path or as a name under `root`
/// (default: `$GRAPHCONTROL_DATA`). Names match case-insensitively.
pub fn find_dataset(spec: &str, root: Option<&Path>) -> Result<DatasetBundle> {
    let direct = Path::new(spec);
    if direct.join(META_FILE).is_file() {
        return load_dataset_dir(direct);
    }
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => match std::env::var_os(DATA_ENV) {
            Some(r) => r.into(),
            None => {
                return Err(Error::Data(format!(
                    "dataset '{spec}' is not a dataset directory and neither data_dir nor {DATA_ENV} is set"
                )))
            }
        },
    };
    if root.join(spec).join(META_FILE).is_file() {
        return load_dataset(&root, spec);
    }
    let wanted = spec.to_lowercase();
    if let Ok(entries) = fs::read_dir(&root) {
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(META_FILE).is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        if let Some(n) = names.into_iter().find(|n| n.to_lowercase() == wanted) {
            return load_dataset(&root, &n);
        }
    }
    Err(Error::Data(format!("dataset '{spec}' not found under {}", root.display())))
}

/// Load `<root>/<name>/` in the native directory format.
pub fn load_dataset(root: &Path, name: &str) -> Result<DatasetBundle> {
    load_dataset_dir(&root.join(name))
}

/// Load a dataset directory in the native format.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| {
        Error::parse(META_FILE, e.line(), format!("malformed meta.json: {e}"))
    })?;

    let edges = read_edges(&dir.join(EDGES_FILE), meta.num_nodes)?;
    let mut graph = Graph::from_edges(meta.num_nodes, &edges)?;

    let features_path = dir.join(FEATURES_FILE);
    if features_path.exists() {
        graph = graph.with_attributes(read_features(&features_path, meta.num_nodes)?)?;
    }
    let labels_path = dir.join(LABELS_FILE);
    if labels_path.exists() {
        let labels = read_labels(&labels_path, meta.num_nodes, meta.num_classes)?;
        graph = graph.with_labels(labels, meta.num_classes)?;
    }
    Ok(DatasetBundle::new(graph, meta.name))
}

/// Write a dataset in the native directory format, creating `dir` if needed.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &bundle.graph;

    write_lines(&dir.join(EDGES_FILE), g.edge_list().iter().map(|(u, v)| format!("{u}\t{v}")))?;
    if let Some(x) = g.attributes() {
        write_lines(
            &dir.join(FEATURES_FILE),
            x.rows().into_iter().map(|row| {
                row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
            }),
        )?;
    }
    if let Some(y) = g.labels() {
        write_lines(&dir.join(LABELS_FILE), y.iter().map(|v| v.to_string()))?;
    }
    let meta = DatasetMeta {
        num_nodes: g.num_nodes,
        num_classes: g.num_classes(),
        name: bundle.name.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Yields `(1-based line number, trimmed line)` for non-empty, non-comment lines.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_edges(path: &Path, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let name = file_name(path);
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(&name, line_no, format!("expected `u<TAB>v`, got {line:?}")));
        };
        let parse = |s: &str| -> Result<usize> {
            let id: usize = s
                .parse()
                .map_err(|_| Error::parse(&name, line_no, format!("invalid node id {s:?}")))?;
            if id >= num_nodes {
                return Err(Error::parse(
                    &name,
                    line_no,
                    format!("node id {id} out of range (num_nodes = {num_nodes})"),
                ));
            }
            Ok(id)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

fn read_features(path: &Path, num_nodes: usize) -> Result<Array2<f64>> {
    let name = file_name(path);
    let lines = content_lines(path)?;
    if lines.len() != num_nodes {
        return Err(Error::parse(
            &name,
            lines.last().map_or(0, |l| l.0),
            format!("attribute row count mismatch: {} rows, expected {num_nodes}", lines.len()),
        ));
    }
    let mut dim = None;
    let mut data = Vec::new();
    for (line_no, line) in &lines {
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(&name, *line_no, format!("invalid attribute value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(&name, *line_no, "non-finite attribute value"));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::parse(
                    &name,
                    *line_no,
                    format!("row has {width} values, expected {d}"),
                ))
            }
            _ => {}
        }
    }
    let dim = dim.unwrap_or(0);
    Array2::from_shape_vec((num_nodes, dim), data).map_err(|e| Error::Data(e.to_string()))
}

fn read_labels(path: &Path, num_nodes: usize, num_classes: usize) -> Result<Vec<u32>> {
    let name = file_name(path);
    let lines = content_lines(path)?;
    if lines.len() != num_nodes {
        return Err(Error::parse(
            &name,
            lines.last().map_or(0, |l| l.0),
            format!("label row count mismatch: {} rows, expected {num_nodes}", lines.len()),
        ));
    }
    lines
        .iter()
        .map(|(line_no, line)| {
            let y: u32 = line
                .parse()
                .map_err(|_| Error::parse(&name, *line_no, format!("invalid label {line:?}")))?;
            if y as usize >= num_classes {
                return Err(Error::parse(
                    &name,
                    *line_no,
                    format!("label out of range: {y} >= num_classes {num_classes}"),
                ));
            }
            Ok(y)
        })
        .collect()
}
