//! The `run` command: extraction (cached), analyses in parallel, manifest.
//!
//! Every output byte is a function of the inputs and the resolved config.
//! The manifest carries no timestamps and no cache state, so identical
//! reruns produce identical manifests too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use sociolex_core::corpus::{load_messages_sharded, ReadOptions};
use sociolex_core::eventstudy::TreatmentTable;
use sociolex_core::variables::{write_demographics_csv, write_occurrences_csv, Extractor, Occurrence};

use crate::analyses;
use crate::config::{load_poles, resolve_path, Analysis, Resources, RunConfig};
use crate::fsutil::{sha256_bytes, sha256_file, write_atomic};

pub const OCCURRENCES_FILE: &str = "occurrences.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const CACHE_DIR: &str = ".cache";

#[derive(Debug, Serialize)]
struct InputRecord {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct AnalysisRecord {
    kind: &'static str,
    name: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    config: RunConfig,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<InputRecord>,
    extraction: ExtractionRecord,
    analyses: Vec<AnalysisRecord>,
    /// Every produced file, relative to the output directory.
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
struct ExtractionRecord {
    cache_key: String,
    lines: u64,
    rejects: u64,
    messages: u64,
    occurrences: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub failed: Vec<String>,
    pub cache_hit: bool,
}

fn display(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn record(role: String, given: &Path, full: &Path) -> Result<InputRecord> {
    Ok(InputRecord {
        role,
        path: display(given),
        sha256: sha256_file(full)?,
    })
}

/// Occurrences for the configured inputs and specs, reused from the cache
/// when the key (input and spec checksums) matches.
fn extract(
    config: &RunConfig,
    base: &Path,
    res: &Resources,
    inputs: &[InputRecord],
    out_dir: &Path,
) -> Result<(Vec<Occurrence>, ExtractionRecord, bool)> {
    let mut key_src = format!("{}\n", env!("CARGO_PKG_VERSION"));
    for i in inputs
        .iter()
        .filter(|i| matches!(i.role.as_str(), "input" | "variables" | "label_map"))
    {
        key_src.push_str(&format!("{} {}\n", i.role, i.sha256));
    }
    key_src.push_str(&format!("strict {}\n", config.strict));
    let key = sha256_bytes(key_src.as_bytes());
    let cache = out_dir.join(CACHE_DIR).join(&key);
    let cached_occ = cache.join(OCCURRENCES_FILE);
    let cached_meta = cache.join("extraction.json");
    if cached_occ.is_file() && cached_meta.is_file() {
        let meta: ExtractionRecord = serde_json::from_slice(&std::fs::read(&cached_meta)?)?;
        let occ = analyses::load_occurrences(&cached_occ)?;
        if meta.cache_key == key && occ.len() as u64 == meta.occurrences {
            return Ok((occ, meta, true));
        }
    }

    let labels = Arc::new(res.labels.clone());
    let extractor = Extractor::new(&res.specs);
    let opts = ReadOptions { strict: config.strict };
    let shards = rayon::current_num_threads().max(1);
    let mut occ = Vec::new();
    let (mut lines, mut rejects, mut messages) = (0, 0, 0);
    for p in &config.inputs {
        let full = resolve_path(base, p);
        let corpus = load_messages_sharded(&full, Some(Arc::clone(&labels)), opts, shards)
            .with_context(|| format!("reading {}", full.display()))?;
        lines += corpus.lines;
        rejects += corpus.rejects;
        messages += corpus.messages.len() as u64;
        occ.extend(extractor.extract_all(&corpus.messages));
    }
    if rejects > 0 {
        eprintln!("note: {rejects} malformed corpus line(s) skipped");
    }
    let meta = ExtractionRecord {
        cache_key: key,
        lines,
        rejects,
        messages,
        occurrences: occ.len() as u64,
    };
    let (occ_bytes, demo_bytes) = occurrence_tables(&occ)?;
    write_atomic(&cached_occ, &occ_bytes)?;
    write_atomic(&analyses::demographics_path(&cached_occ), &demo_bytes)?;
    write_atomic(&cached_meta, &serde_json::to_vec_pretty(&meta)?)?;
    Ok((occ, meta, false))
}

fn occurrence_tables(occ: &[Occurrence]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut a = Vec::new();
    write_occurrences_csv(&mut a, occ)?;
    let mut b = Vec::new();
    write_demographics_csv(&mut b, occ)?;
    Ok((a, b))
}

fn run_one(a: &Analysis, base: &Path, config: &RunConfig, occ: &[Occurrence], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = out_dir.join(format!("{}_{}.csv", a.kind(), a.name()));
    match a {
        Analysis::Rates(b) => analyses::rates(b, occ, &csv),
        Analysis::Trend(b) => analyses::trend(b, occ, &csv),
        Analysis::Groups(b) => analyses::groups(b, occ, &csv),
        Analysis::Did(b) => {
            let table = match &b.treatments {
                Some(p) => TreatmentTable::load(&resolve_path(base, p))?,
                None => TreatmentTable::marriage_equality(),
            };
            analyses::did(b, &table, occ, &csv)
        }
        Analysis::Shift(b) => {
            let corpus = resolve_path(base, b.corpus.as_ref().unwrap_or(&config.inputs[0]));
            let poles = load_poles(base, &b.poles).map_err(anyhow::Error::msg)?;
            analyses::shift(b, &corpus, &poles, &csv)
        }
    }
}

/// Runs a resolved, validated config. `base` is the config directory and
/// `out_dir` the resolved output directory.
pub fn run(config: &RunConfig, base: &Path, res: &Resources, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut inputs = Vec::new();
    for p in &config.inputs {
        inputs.push(record("input".into(), p, &resolve_path(base, p))?);
    }
    for p in &config.variables {
        inputs.push(record("variables".into(), p, &resolve_path(base, p))?);
    }
    if let Some(p) = &config.label_map {
        inputs.push(record("label_map".into(), p, &resolve_path(base, p))?);
    }
    for a in &config.analyses {
        match a {
            Analysis::Did(b) => {
                if let Some(p) = &b.treatments {
                    inputs.push(record(format!("{}:treatments", a.name()), p, &resolve_path(base, p))?);
                }
            }
            Analysis::Shift(b) => {
                if let Some(p) = &b.corpus {
                    inputs.push(record(format!("{}:corpus", a.name()), p, &resolve_path(base, p))?);
                }
                if !matches!(b.poles.as_str(), "terms" | "names") {
                    let p = Path::new(&b.poles);
                    inputs.push(record(format!("{}:poles", a.name()), p, &resolve_path(base, p))?);
                }
            }
            _ => {}
        }
    }

    let (occ, extraction, cache_hit) = extract(config, base, res, &inputs, out_dir)?;
    let (occ_bytes, demo_bytes) = occurrence_tables(&occ)?;
    let occ_path = out_dir.join(OCCURRENCES_FILE);
    write_atomic(&occ_path, &occ_bytes)?;
    let demo_path = analyses::demographics_path(&occ_path);
    write_atomic(&demo_path, &demo_bytes)?;

    let results: Vec<Result<Vec<PathBuf>>> = config
        .analyses
        .par_iter()
        .map(|a| run_one(a, base, config, &occ, out_dir))
        .collect();

    let rel = |p: &Path| display(p.strip_prefix(out_dir).unwrap_or(p));
    let mut produced = vec![occ_path.clone(), demo_path.clone()];
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (a, r) in config.analyses.iter().zip(results) {
        let label = format!("{}:{}", a.kind(), a.name());
        match r {
            Ok(files) => {
                records.push(AnalysisRecord {
                    kind: a.kind(),
                    name: a.name().to_string(),
                    status: "ok",
                    error: None,
                    files: files.iter().map(|f| rel(f)).collect(),
                });
                produced.extend(files);
            }
            Err(e) => {
                eprintln!("error: analysis {label} failed: {e:#}");
                records.push(AnalysisRecord {
                    kind: a.kind(),
                    name: a.name().to_string(),
                    status: "failed",
                    error: Some(format!("{e:#}")),
                    files: Vec::new(),
                });
                failed.push(label);
            }
        }
    }

    let mut files = BTreeMap::new();
    for f in &produced {
        files.insert(rel(f), sha256_file(f)?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config.hash(),
        config: config.clone(),
        seeds: config
            .analyses
            .iter()
            .filter_map(|a| a.seed().map(|s| (format!("{}:{}", a.kind(), a.name()), s)))
            .collect(),
        inputs,
        extraction,
        analyses: records,
        files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(RunOutcome {
        output_dir: out_dir.to_path_buf(),
        failed,
        cache_hit,
    })
}
