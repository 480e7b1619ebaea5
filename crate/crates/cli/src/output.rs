//! Artifacts, the run manifest and their on-disk form. Every artifact carries
//! the config hash in its header: a `#` comment line for CSV, a top-level
//! `config_hash` key for JSON, an XML comment for SVG.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{sha256_hex, InputFile};

#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    Csv { name: String, header: Vec<String>, rows: Vec<Vec<String>> },
    Json { name: String, value: Value },
    Svg { name: String, body: String },
}

impl Artifact {
    pub fn csv(name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Artifact::Csv { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows }
    }

    pub fn json(name: &str, value: impl Serialize) -> Self {
        Artifact::Json { name: name.into(), value: serde_json::to_value(value).expect("results serialize") }
    }

    pub fn name(&self) -> &str {
        match self {
            Artifact::Csv { name, .. } | Artifact::Json { name, .. } | Artifact::Svg { name, .. } => name,
        }
    }

    pub fn render(&self, subcommand: &str, hash: &str) -> Vec<u8> {
        match self {
            Artifact::Csv { header, rows, .. } => {
                let mut buf = format!("# mtcp {subcommand} config_hash={hash}\n").into_bytes();
                {
                    let mut w = csv::Writer::from_writer(&mut buf);
                    w.write_record(header).expect("in-memory write");
                    for r in rows {
                        w.write_record(r).expect("in-memory write");
                    }
                    w.flush().expect("in-memory write");
                }
                buf
            }
            Artifact::Json { value, .. } => {
                let doc = serde_json::json!({ "config_hash": hash, "subcommand": subcommand, "result": value });
                let mut s = serde_json::to_string_pretty(&doc).expect("json");
                s.push('\n');
                s.into_bytes()
            }
            Artifact::Svg { body, .. } => {
                format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- mtcp {subcommand} config_hash={hash} -->\n{body}")
                    .into_bytes()
            }
        }
    }
}

/// Shortest round-trip decimal form; `inf`, `-inf`, `nan` otherwise.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn point(p: &[i64]) -> String {
    p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// What a command hands back for writing.
#[derive(Clone, Debug, Default)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// Per-command summary of censored or boundary-affected runs.
    pub censoring: Value,
    pub inputs: Vec<InputFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    /// Unix seconds; `SOURCE_DATE_EPOCH` pins both when set.
    pub started_at: u64,
    pub finished_at: u64,
    /// The resolved configuration; enough to re-run the command.
    pub config: Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<OutputEntry>,
    pub censoring: Value,
}

pub const MANIFEST: &str = "manifest.json";

pub fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes every artifact into `dir` and returns the manifest entries.
pub fn write_artifacts(dir: &Path, subcommand: &str, hash: &str, artifacts: &[Artifact]) -> std::io::Result<Vec<OutputEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for a in artifacts {
        let bytes = a.render(subcommand, hash);
        std::fs::write(dir.join(a.name()), &bytes)?;
        entries.push(OutputEntry { file: a.name().into(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    }
    Ok(entries)
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> std::io::Result<PathBuf> {
    let path = dir.join(MANIFEST);
    let mut s = serde_json::to_string_pretty(m).expect("json");
    s.push('\n');
    std::fs::write(&path, s)?;
    Ok(path)
}
