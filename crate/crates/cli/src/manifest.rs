use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{self, Scenario, Stage};
use crate::error::CliError;
use crate::pipeline;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_path: String,
    /// Hash of the scenario file as read.
    pub config_sha256: String,
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
    pub metrics: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

pub fn load_scenario(arg: &str) -> Result<(PathBuf, Vec<u8>, Scenario), CliError> {
    let path = config::resolve(arg);
    let raw = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Config(format!("no scenario at {}", path.display())),
        _ => CliError::Io(format!("{}: {e}", path.display())),
    })?;
    let text = std::str::from_utf8(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::parse(text)?;
    Ok((path, raw, scenario))
}

/// Runs a scenario and writes its outputs and manifest into the output
/// directory, replacing a previous run there. Nothing is written unless
/// every stage succeeds.
pub fn run(arg: &str, opts: &RunOptions) -> Result<(PathBuf, Manifest), CliError> {
    let start = Instant::now();
    let (path, raw, mut scenario) = load_scenario(arg)?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    scenario.seed = seed;
    let out_dir = opts
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));

    let mut outputs = pipeline::execute(&scenario, seed)?;
    let resolved = toml::to_string_pretty(&scenario).map_err(|e| CliError::Config(e.to_string()))?;
    outputs.files.push(("resolved_config.toml".into(), resolved.into_bytes()));
    outputs.files.sort_by(|a, b| a.0.cmp(&b.0));

    let entries = outputs
        .files
        .iter()
        .map(|(p, b)| OutputEntry {
            path: p.clone(),
            sha256: sha256_hex(b),
            bytes: b.len() as u64,
        })
        .collect();
    let versions = BTreeMap::from([
        ("nanocavity".to_string(), nanocavity::VERSION.to_string()),
        ("nanocavity-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]);
    let manifest = Manifest {
        scenario: scenario.name.clone(),
        config_path: path.display().to_string(),
        config_sha256: sha256_hex(&raw),
        stages: scenario.stages.clone(),
        seed,
        threads: rayon::current_num_threads(),
        versions,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: entries,
        metrics: Value::Object(outputs.metrics),
    };
    let mut body = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    body.push(b'\n');
    outputs.files.push((MANIFEST_FILE.into(), body));
    commit(&out_dir, &outputs.files)?;
    Ok((out_dir, manifest))
}

/// Writes all files into a sibling staging directory, then swaps it in.
fn commit(out_dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    if out_dir.exists() {
        let empty = fs::read_dir(out_dir).map_err(|e| io(out_dir, e))?.next().is_none();
        if !empty && !out_dir.join(MANIFEST_FILE).is_file() {
            return Err(CliError::Io(format!(
                "{} exists and does not hold a previous run",
                out_dir.display()
            )));
        }
    }
    let parent = match out_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| io(&parent, e))?;
    let leaf = out_dir
        .file_name()
        .ok_or_else(|| CliError::Io(format!("bad output directory {}", out_dir.display())))?;
    let staging = parent.join(format!(".{}.staging-{}", leaf.to_string_lossy(), std::process::id()));
    let result = (|| {
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| io(&staging, e))?;
        }
        for (rel, body) in files {
            let p = staging.join(rel);
            if let Some(d) = p.parent() {
                fs::create_dir_all(d).map_err(|e| io(d, e))?;
            }
            fs::write(&p, body).map_err(|e| io(&p, e))?;
        }
        if out_dir.exists() {
            fs::remove_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
        }
        fs::rename(&staging, out_dir).map_err(|e| io(out_dir, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let p = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let raw = fs::read(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    serde_json::from_slice(&raw).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

/// Quantities tabulated by `compare`, looked up under `metrics.farfield.selected`.
pub const COMPARED: [&str; 4] = ["eta_lens", "eta_smf", "q_total", "lambda_cav_nm"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub quantity: &'static str,
    pub a: f64,
    pub b: f64,
    pub ratio: f64,
}

/// Ratios `a / b` of the selected-design far-field figures of two runs.
pub fn compare(a: &Manifest, b: &Manifest) -> Result<Vec<CompareRow>, CliError> {
    let get = |m: &Manifest, label: &str, key: &str| -> Result<f64, CliError> {
        m.metrics
            .get("farfield")
            .and_then(|f| f.get("selected"))
            .and_then(|s| s.get(key))
            .and_then(Value::as_f64)
            .ok_or_else(|| {
                CliError::StageMismatch(format!(
                    "manifest {label} ({}) has no farfield.selected.{key}",
                    m.scenario
                ))
            })
    };
    COMPARED
        .iter()
        .map(|&q| {
            let (x, y) = (get(a, "a", q)?, get(b, "b", q)?);
            Ok(CompareRow {
                quantity: q,
                a: x,
                b: y,
                ratio: x / y,
            })
        })
        .collect()
}

pub fn format_report(a: &Manifest, b: &Manifest, rows: &[CompareRow]) -> String {
    let mut s = format!("a: {}\nb: {}\n", a.scenario, b.scenario);
    s.push_str(&format!("{:<16}{:>14}{:>14}{:>12}\n", "quantity", "a", "b", "a/b"));
    for r in rows {
        s.push_str(&format!("{:<16}{:>14.6}{:>14.6}{:>12.6}\n", r.quantity, r.a, r.b, r.ratio));
    }
    s
}
