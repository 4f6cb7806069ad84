//! Ingestion of common third-party graph exports into the native layout.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{DatasetBundle, Graph};
use crate::error::{Error, Result};

/// Whitespace/comma separated edge list, optionally with a `node label` file.
///
/// Node identifiers may be arbitrary tokens; they are remapped to `0..N` in
/// numeric order when every identifier is an integer, lexicographic order
/// otherwise. Label values are remapped the same way.
#[derive(Debug, Clone)]
pub struct EdgeListSource {
    pub edges: PathBuf,
    pub labels: Option<PathBuf>,
    pub name: String,
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect()
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        let t = tokens(line);
        if t.len() < 2 {
            return Err(Error::parse(&name, i + 1, format!("expected two fields, got {line:?}")));
        }
        out.push((i + 1, t[0].to_string(), t[1].to_string()));
    }
    Ok(out)
}

/// Sort tokens numerically when they all parse as integers.
fn ordered_ids<'a>(ids: impl Iterator<Item = &'a String>) -> HashMap<String, usize> {
    let mut uniq: Vec<&String> = ids.collect();
    uniq.sort();
    uniq.dedup();
    if uniq.iter().all(|s| s.parse::<i64>().is_ok()) {
        uniq.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    uniq.into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect()
}

pub fn convert_edge_list(src: &EdgeListSource) -> Result<DatasetBundle> {
    let edge_rows = read_pairs(&src.edges)?;
    let mut label_rows = match &src.labels {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    // A header such as `node label` is tolerated on the first labels line.
    if let Some(first) = label_rows.first() {
        if first.2.parse::<i64>().is_err() && label_rows.iter().skip(1).all(|r| r.2.parse::<i64>().is_ok()) {
            label_rows.remove(0);
        }
    }

    let node_index = ordered_ids(
        edge_rows
            .iter()
            .flat_map(|r| [&r.1, &r.2])
            .chain(label_rows.iter().map(|r| &r.1)),
    );
    let n = node_index.len();
    let edges: Vec<(usize, usize)> = edge_rows
        .iter()
        .map(|r| (node_index[&r.1], node_index[&r.2]))
        .collect();
    let mut graph = Graph::from_edges(n, &edges)?;

    if let Some(path) = &src.labels {
        let class_index = ordered_ids(label_rows.iter().map(|r| &r.2));
        let mut labels: Vec<Option<u32>> = vec![None; n];
        for (line, node, class) in &label_rows {
            let slot = &mut labels[node_index[node]];
            let y = class_index[class] as u32;
            if slot.is_some_and(|prev| prev != y) {
                return Err(Error::parse(
                    path.display().to_string(),
                    *line,
                    format!("node {node} has conflicting labels"),
                ));
            }
            *slot = Some(y);
        }
        if let Some(missing) = labels.iter().position(Option::is_none) {
            let token = node_index
                .iter()
                .find(|(_, &i)| i == missing)
                .map(|(k, _)| k.clone())
                .unwrap_or_default();
            return Err(Error::Data(format!("node {token} has no label")));
        }
        let labels = labels.into_iter().map(Option::unwrap).collect();
        graph = graph.with_labels(labels, class_index.len())?;
    }
    Ok(DatasetBundle::new(graph, src.name.clone()))
}

/// Dense numeric view of a `.npy` array.
#[derive(Debug, Clone)]
struct NpyArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn parse_npy(bytes: &[u8], entry: &str) -> Result<Option<NpyArray>> {
    let bad = |msg: &str| Error::Data(format!("{entry}: {msg}"));
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("not a .npy array"));
    }
    let major = bytes[6];
    let (header_len, start) = if major == 1 {
        (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10)
    } else {
        if bytes.len() < 12 {
            return Err(bad("truncated header"));
        }
        (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
    };
    let header = std::str::from_utf8(bytes.get(start..start + header_len).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not UTF-8"))?;
    let field = |key: &str| -> Option<&str> {
        let at = header.find(&format!("'{key}'"))?;
        let rest = &header[at + key.len() + 2..];
        Some(rest.trim_start_matches([':', ' ']))
    };
    let descr = field("descr").ok_or_else(|| bad("missing descr"))?;
    let descr = descr.trim_start_matches('\'');
    let descr = &descr[..descr.find('\'').ok_or_else(|| bad("bad descr"))?];
    if field("fortran_order").is_some_and(|s| s.starts_with("True")) {
        return Err(bad("Fortran-ordered arrays are not supported"));
    }
    let shape_src = field("shape").ok_or_else(|| bad("missing shape"))?;
    let shape_src = &shape_src[1..shape_src.find(')').ok_or_else(|| bad("bad shape"))?];
    let shape: Vec<usize> = shape_src
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[start + header_len..];

    macro_rules! decode {
        ($t:ty) => {{
            const W: usize = std::mem::size_of::<$t>();
            if body.len() < count * W {
                return Err(bad("truncated data"));
            }
            body.chunks_exact(W)
                .take(count)
                .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect::<Vec<f64>>()
        }};
    }
    let data = match descr {
        "<f8" => decode!(f64),
        "<f4" => decode!(f32),
        "<i8" => decode!(i64),
        "<i4" => decode!(i32),
        "<i2" => decode!(i16),
        "<u8" => decode!(u64),
        "<u4" => decode!(u32),
        "<u2" => decode!(u16),
        "|i1" => decode!(i8),
        "|u1" | "|b1" => decode!(u8),
        _ => return Ok(None),
    };
    Ok(Some(NpyArray { shape, data }))
}

fn csr_from(arrays: &BTreeMap<String, NpyArray>, prefix: &str) -> Option<(usize, usize, Vec<(usize, usize, f64)>)> {
    let data = arrays.get(&format!("{prefix}_data"))?;
    let indices = arrays.get(&format!("{prefix}_indices"))?;
    let indptr = arrays.get(&format!("{prefix}_indptr"))?;
    let shape = arrays.get(&format!("{prefix}_shape"))?;
    let rows = shape.data[0] as usize;
    let cols = shape.data[1] as usize;
    let mut triples = Vec::with_capacity(data.data.len());
    for r in 0..rows {
        for k in indptr.data[r] as usize..indptr.data[r + 1] as usize {
            triples.push((r, indices.data[k] as usize, data.data[k]));
        }
    }
    Some((rows, cols, triples))
}

/// Convert a scipy-sparse style `.npz` archive (keys `adj_*`, optional `attr_*`
/// or `attr_matrix`, and `labels`) as distributed for citation benchmarks.
pub fn convert_npz(path: &Path, name: &str) -> Result<DatasetBundle> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut arrays = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(|e| Error::Data(e.to_string()))?;
        let entry_name = entry.name().trim_end_matches(".npy").to_string();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if let Some(arr) = parse_npy(&bytes, &entry_name)? {
            arrays.insert(entry_name, arr);
        }
    }

    let (n, n2, adj) = csr_from(&arrays, "adj")
        .ok_or_else(|| Error::Data(format!("{}: missing adj_* arrays", path.display())))?;
    if n != n2 {
        return Err(Error::Data("adjacency matrix is not square".into()));
    }
    let edges: Vec<(usize, usize)> = adj
        .iter()
        .filter(|t| t.2 != 0.0)
        .map(|&(u, v, _)| (u, v))
        .collect();
    let mut graph = Graph::from_edges(n, &edges)?;

    if let Some((rows, cols, triples)) = csr_from(&arrays, "attr") {
        let mut x = Array2::zeros((rows, cols));
        for (r, c, v) in triples {
            x[(r, c)] += v;
        }
        graph = graph.with_attributes(x)?;
    } else if let Some(dense) = arrays.get("attr_matrix") {
        if dense.shape.len() == 2 {
            let x = Array2::from_shape_vec((dense.shape[0], dense.shape[1]), dense.data.clone())
                .map_err(|e| Error::Data(e.to_string()))?;
            graph = graph.with_attributes(x)?;
        }
    }
    if let Some(labels) = arrays.get("labels") {
        let raw: Vec<i64> = labels.data.iter().map(|&v| v as i64).collect();
        let mut classes: Vec<i64> = raw.clone();
        classes.sort_unstable();
        classes.dedup();
        let y = raw
            .iter()
            .map(|v| classes.binary_search(v).unwrap() as u32)
            .collect();
        graph = graph.with_labels(y, classes.len())?;
    }
    Ok(DatasetBundle::new(graph, name))
}
