//! Report envelopes, hashing and replay.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::commands::Config;
use crate::{CliError, CliResult, OUT_DIR_VAR};

pub const TOOL: &str = "momsq";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    pub key: Value,
    pub value: Value,
    pub hash: String,
}

impl Entry {
    pub fn new(key: Value, value: Value) -> Self {
        let hash = entry_hash(&key, &value);
        Entry { key, value, hash }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub tool: String,
    pub version: String,
    pub config: Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub grid: Value,
    pub entries: Vec<Entry>,
    pub summary: Value,
    pub pass: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `serde_json` maps are sorted, so the compact encoding is canonical.
pub fn value_hash(v: &Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

pub fn entry_hash(key: &Value, value: &Value) -> String {
    value_hash(&json!({"key": key, "value": value}))
}

fn pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

/// Compute the listed keys in parallel; results keep the key order.
fn compute_all(config: &Config, keys: &[Value], threads: Option<usize>) -> CliResult<Vec<Value>> {
    pool(threads)?.install(|| keys.par_iter().map(|k| config.compute(k)).collect())
}

pub fn run(config: &Config, threads: Option<usize>) -> CliResult<Envelope> {
    config.validate()?;
    let keys = config.keys();
    let values = compute_all(config, &keys, threads)?;
    let entries: Vec<Entry> = keys.into_iter().zip(values).map(|(k, v)| Entry::new(k, v)).collect();
    let (summary, pass) = config.summarize(&entries);
    let config_value = serde_json::to_value(config)?;
    Ok(Envelope {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: value_hash(&config_value),
        config: config_value,
        seeds: config.seeds(),
        grid: config.grid(),
        entries,
        summary,
        pass,
    })
}

/// `--out` if given, else `$MOMSQ_OUT_DIR/<name>`, else `momsq-out/<name>`.
pub fn output_path(out: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("momsq-out"));
    dir.join(name)
}

pub fn write_json(path: &Path, env: &Envelope) -> CliResult<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    fs::write(path, serde_json::to_string_pretty(env)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> CliResult<Envelope> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a report: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    /// `entries[i]` or `summary`, followed by a JSON path.
    pub location: String,
    pub key: Value,
    pub stored: Value,
    pub recomputed: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub config_ok: bool,
    /// Entries whose stored hash no longer matches their content.
    pub tampered: Vec<usize>,
    pub recomputed: Vec<usize>,
    pub mismatches: Vec<Mismatch>,
    pub pass: bool,
}

pub const REPLAY_TOL: f64 = 1e-9;
const SAMPLE_PERCENT: u64 = 10;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REPLAY_TOL * 1f64.max(a.abs()).max(b.abs())
}

/// Paths where two JSON values differ; numbers compare within the replay tolerance.
pub fn diff(a: &Value, b: &Value, path: &str, out: &mut Vec<(String, Value, Value)>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if !close(x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN)) {
                out.push((path.to_string(), a.clone(), b.clone()));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => diff(v, w, &format!("{path}.{k}"), out),
                    None => out.push((format!("{path}.{k}"), v.clone(), Value::Null)),
                }
            }
            for (k, w) in y.iter().filter(|(k, _)| !x.contains_key(*k)) {
                out.push((format!("{path}.{k}"), Value::Null, w.clone()));
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                diff(v, w, &format!("{path}[{i}]"), out);
            }
        }
        _ => {
            if a != b {
                out.push((path.to_string(), a.clone(), b.clone()));
            }
        }
    }
}

/// A deterministic tenth of the entries (at least one), chosen from the config hash.
pub fn sample_indices(config_hash: &str, len: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..len)
        .filter(|i| {
            let h = Sha256::digest(format!("{config_hash}:{i}").as_bytes());
            u64::from_le_bytes(h[..8].try_into().unwrap()) % 100 < SAMPLE_PERCENT
        })
        .collect();
    if picked.is_empty() && len > 0 {
        picked.push(0);
    }
    picked
}

pub fn replay(env: &Envelope, threads: Option<usize>) -> CliResult<ReplayReport> {
    let config_ok = value_hash(&env.config) == env.config_hash;
    if !config_ok {
        return Ok(ReplayReport { config_ok, tampered: vec![], recomputed: vec![], mismatches: vec![], pass: false });
    }
    let config: Config = serde_json::from_value(env.config.clone())
        .map_err(|e| CliError::Usage(format!("unrecognised config: {e}")))?;
    let keys = config.keys();
    let mut mismatches = Vec::new();
    if keys.len() != env.entries.len() || keys.iter().zip(&env.entries).any(|(k, e)| *k != e.key) {
        mismatches.push(Mismatch {
            location: "entries".into(),
            key: Value::Null,
            stored: json!(env.entries.len()),
            recomputed: json!(keys.len()),
        });
    }
    let tampered: Vec<usize> = env
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| entry_hash(&e.key, &e.value) != e.hash)
        .map(|(i, _)| i)
        .collect();
    let mut todo = sample_indices(&env.config_hash, env.entries.len());
    todo.extend(&tampered);
    todo.sort_unstable();
    todo.dedup();
    let keys_todo: Vec<Value> = todo.iter().map(|&i| env.entries[i].key.clone()).collect();
    let fresh = compute_all(&config, &keys_todo, threads)?;
    for (&i, v) in todo.iter().zip(&fresh) {
        let mut d = Vec::new();
        diff(&env.entries[i].value, v, &format!("entries[{i}].value"), &mut d);
        mismatches.extend(d.into_iter().map(|(location, stored, recomputed)| Mismatch {
            location,
            key: env.entries[i].key.clone(),
            stored,
            recomputed,
        }));
    }
    let (summary, pass) = config.summarize(&env.entries);
    let mut d = Vec::new();
    diff(&env.summary, &summary, "summary", &mut d);
    if pass != env.pass {
        d.push(("pass".into(), json!(env.pass), json!(pass)));
    }
    mismatches.extend(d.into_iter().map(|(location, stored, recomputed)| Mismatch {
        location,
        key: Value::Null,
        stored,
        recomputed,
    }));
    let pass = tampered.is_empty() && mismatches.is_empty();
    Ok(ReplayReport { config_ok, tampered, recomputed: todo, mismatches, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_tolerates_rounding_only() {
        let a = json!({"x": 1.0, "y": [1, 2], "z": "s"});
        let mut out = Vec::new();
        diff(&a, &json!({"x": 1.0 + 1e-12, "y": [1, 2], "z": "s"}), "v", &mut out);
        assert!(out.is_empty());
        diff(&a, &json!({"x": 1.0 + 1e-6, "y": [1, 3], "w": 0}), "v", &mut out);
        let paths: Vec<&str> = out.iter().map(|d| d.0.as_str()).collect();
        assert_eq!(paths, ["v.x", "v.y[1]", "v.z", "v.w"]);
    }

    #[test]
    fn sample_is_deterministic_and_sparse() {
        let a = sample_indices("abc", 1000);
        assert_eq!(a, sample_indices("abc", 1000));
        assert!(a.len() > 50 && a.len() < 150, "{}", a.len());
        assert_eq!(sample_indices("abc", 1).len(), 1);
    }

    #[test]
    fn entry_hash_covers_key_and_value() {
        let e = Entry::new(json!({"seed": 1}), json!({"ratio": 2.5}));
        assert_ne!(e.hash, entry_hash(&json!({"seed": 2}), &e.value));
        assert_ne!(e.hash, entry_hash(&e.key, &json!({"ratio": 2.6})));
    }
}
