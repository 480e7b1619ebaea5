//! Configuration, orchestration, persistence and diagram rendering for the
//! multitype contact process lab.

pub mod commands;
pub mod config;
pub mod output;
pub mod render;

use std::path::Path;

use anyhow::{bail, Context};
use serde_json::Value;

use crate::config::{Command, Overrides, Subcommand};
use crate::output::{now, write_artifacts, write_manifest, RunManifest, MANIFEST};

/// Runs a parsed command and writes its artifacts and manifest into `out`.
pub fn run(cmd: &Command, out: &Path) -> anyhow::Result<RunManifest> {
    let started_at = now();
    let result = commands::execute(cmd)?;
    let sub = cmd.subcommand().name();
    let hash = cmd.hash();
    let outputs = write_artifacts(out, sub, &hash, &result.artifacts).with_context(|| format!("writing into {}", out.display()))?;
    let manifest = RunManifest {
        subcommand: sub.into(),
        config_hash: hash,
        master_seed: cmd.master_seed(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started_at,
        finished_at: now(),
        config: cmd.resolved(),
        inputs: result.inputs,
        outputs,
        censoring: result.censoring,
    };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Parses a TOML config file for `sub` and runs it.
pub fn run_config(sub: Subcommand, config: &Path, overrides: &Overrides, out: &Path) -> anyhow::Result<RunManifest> {
    let value = config::read_toml(config)?;
    let cmd = Command::from_value(sub, value, overrides)?;
    run(&cmd, out)
}

/// Outcome of re-running a manifest.
#[derive(Debug)]
pub struct Replay {
    pub manifest: RunManifest,
    /// (file, identical to the recorded digest)
    pub files: Vec<(String, bool)>,
}

impl Replay {
    pub fn identical(&self) -> bool {
        self.files.iter().all(|f| f.1)
    }
}

/// Re-runs the command recorded in a manifest into `out` and compares every
/// output digest with the recorded one.
pub fn replay(manifest: &Path, out: &Path) -> anyhow::Result<Replay> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let old: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    let Some(sub) = Subcommand::parse(&old.subcommand) else {
        bail!("unknown subcommand `{}` in manifest", old.subcommand);
    };
    for input in &old.inputs {
        let bytes = std::fs::read(&input.path).with_context(|| format!("reading input {}", input.path))?;
        if config::sha256_hex(&bytes) != input.sha256 {
            bail!("input {} changed since the manifest was written", input.path);
        }
    }
    let cmd = Command::from_value(sub, old.config.clone(), &Overrides::default())?;
    if cmd.hash() != old.config_hash {
        bail!("config hash mismatch: manifest has {}, config hashes to {}", old.config_hash, cmd.hash());
    }
    if out.join(MANIFEST) == manifest {
        bail!("replay output directory must differ from the manifest's");
    }
    let new = run(&cmd, out)?;
    let files = old
        .outputs
        .iter()
        .map(|o| {
            let same = new.outputs.iter().any(|n| n.file == o.file && n.sha256 == o.sha256);
            (o.file.clone(), same)
        })
        .collect();
    Ok(Replay { manifest: new, files })
}

/// The resolved config of a manifest, for inspection.
pub fn manifest_config(m: &RunManifest) -> &Value {
    &m.config
}
