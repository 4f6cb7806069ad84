//! Flat `key = value` configuration files with one section per subcommand.
//!
//! ```text
//! # shared by every subcommand that knows the key
//! dataset = Cora_ML
//!
//! [pretrain]
//! epochs = 100
//!
//! [benchmark]
//! mode = graphcontrol
//! threshold = 0.17
//! ```
//!
//! Values are resolved as defaults < dataset profile < top-level entries <
//! section entries < `--set` overrides < `--seed`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use graphcontrol::Error;
use serde_json::{Map, Value};

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub global: Vec<Entry>,
    pub sections: BTreeMap<String, Vec<Entry>>,
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<ConfigFile, Error> {
        let mut out = ConfigFile::default();
        let mut problems = Vec::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let origin = format!("{source}:{}", i + 1);
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                out.sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let entry = Entry {
                        key: k.trim().to_string(),
                        value: unquote(v).to_string(),
                        origin,
                    };
                    match &section {
                        Some(s) => out.sections.get_mut(s).unwrap().push(entry),
                        None => out.global.push(entry),
                    }
                }
                _ => problems.push(format!("{origin}: expected 'key = value' or '[section]', got {line:?}")),
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<ConfigFile, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        ConfigFile::parse(&text, &path.display().to_string())
    }
}

/// Parse a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<Entry, Error> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok(Entry {
            key: k.trim().to_string(),
            value: unquote(v).to_string(),
            origin: "--set".to_string(),
        }),
        _ => Err(Error::Config(vec![format!("--set expects key=value, got {s:?}")])),
    }
}

/// Closest known key within a small edit distance.
pub fn suggest<'a>(key: &str, known: impl IntoIterator<Item = &'a String>) -> Option<&'a str> {
    let limit = (key.len() / 3).max(2);
    known
        .into_iter()
        .map(|k| (strsim::levenshtein(key, k), k))
        .filter(|(d, _)| *d <= limit)
        .min()
        .map(|(_, k)| k.as_str())
}

fn unknown(entry: &Entry, known: &BTreeSet<String>) -> String {
    let mut msg = format!("{}: unknown key '{}'", entry.origin, entry.key);
    if let Some(s) = suggest(&entry.key, known) {
        msg.push_str(&format!(" (did you mean '{s}'?)"));
    }
    msg
}

fn convert(entry: &Entry, current: &Value) -> Result<Value, String> {
    let v = entry.value.as_str();
    let bad = |what: &str| format!("{}: key '{}' expects {what}, got '{v}'", entry.origin, entry.key);
    match current {
        Value::Bool(_) => v.parse::<bool>().map(Value::Bool).map_err(|_| bad("true or false")),
        Value::Number(n) if n.is_u64() => v.parse::<u64>().map(Value::from).map_err(|_| bad("a non-negative integer")),
        Value::Number(n) if n.is_i64() => v.parse::<i64>().map(Value::from).map_err(|_| bad("an integer")),
        Value::Number(_) => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Value::from(x)),
            _ => Err(bad("a finite number")),
        },
        Value::Null if v.is_empty() || v == "none" => Ok(Value::Null),
        _ => Ok(Value::String(v.to_string())),
    }
}

/// Keyed settings of one subcommand, split into typed parts.
#[derive(Debug, Clone)]
pub struct Settings {
    parts: Vec<Map<String, Value>>,
}

impl Settings {
    /// `parts` are the serialized defaults; each must be a JSON object and
    /// their key sets must be disjoint.
    pub fn new(parts: Vec<Value>) -> Settings {
        let parts = parts
            .into_iter()
            .map(|p| match p {
                Value::Object(m) => m,
                other => panic!("settings part is not an object: {other}"),
            })
            .collect();
        Settings { parts }
    }

    pub fn keys(&self) -> BTreeSet<String> {
        self.parts.iter().flat_map(|p| p.keys().cloned()).collect()
    }

    /// Apply entries in order; every unknown key or bad value is reported.
    pub fn apply(&mut self, entries: &[Entry]) -> Result<(), Error> {
        let known = self.keys();
        let mut problems = Vec::new();
        for e in entries {
            match self.parts.iter_mut().find_map(|p| p.get_mut(&e.key)) {
                Some(slot) => match convert(e, slot) {
                    Ok(v) => *slot = v,
                    Err(m) => problems.push(m),
                },
                None => problems.push(unknown(e, &known)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.parts.iter().find_map(|p| p.get(key))
    }

    pub fn set(&mut self, key: &str, value: Value) {
        if let Some(slot) = self.parts.iter_mut().find_map(|p| p.get_mut(key)) {
            *slot = value;
        }
    }

    /// Deserialize part `i`.
    pub fn part<T: serde::de::DeserializeOwned>(&self, i: usize) -> Result<T, Error> {
        serde_json::from_value(Value::Object(self.parts[i].clone())).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// All effective values as one flat object.
    pub fn resolved(&self) -> Map<String, Value> {
        let mut out = Map::new();
        for p in &self.parts {
            out.extend(p.clone());
        }
        out
    }
}

/// Check top-level keys against every subcommand and section keys against
/// their own subcommand, reporting every problem at once.
pub fn check_file(file: &ConfigFile, schemas: &BTreeMap<&str, BTreeSet<String>>) -> Result<(), Error> {
    let mut problems = Vec::new();
    let all: BTreeSet<String> = schemas.values().flatten().cloned().collect();
    for e in &file.global {
        if !all.contains(&e.key) {
            problems.push(unknown(e, &all));
        }
    }
    for (name, entries) in &file.sections {
        match schemas.get(name.as_str()) {
            Some(keys) => problems.extend(entries.iter().filter(|e| !keys.contains(&e.key)).map(|e| unknown(e, keys))),
            None => {
                let names: Vec<&str> = schemas.keys().copied().collect();
                problems.push(format!("unknown section [{name}] (expected one of {})", names.join(", ")));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems))
    }
}
