//! Run manifests: everything needed to re-run a command and check that it
//! reproduces its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    /// Arguments after the program name, without `--out`.
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 of each input file, keyed by the path as given.
    pub input_hashes: BTreeMap<String, String>,
    /// SHA-256 of each file written next to the manifest.
    pub output_hashes: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Drops `--out <dir>` and `--out=<dir>` from an argument list.
pub fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

/// Files produced by one command, held in memory until written together
/// with their manifest.
#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
    inputs: BTreeMap<String, String>,
    config: serde_json::Value,
    seed: Option<u64>,
}

impl Outputs {
    pub fn new(config: serde_json::Value, seed: Option<u64>) -> Self {
        Self { config, seed, ..Self::default() }
    }

    /// Reads an input file and records its hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = formats::read_bytes(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn write(self, dir: &Path, command: Vec<String>) -> Result<RunManifest> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut output_hashes = BTreeMap::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            output_hashes.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: self.config,
            seed: self.seed,
            input_hashes: self.inputs,
            output_hashes,
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, formats::to_json(&manifest)).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Checks that every recorded input still has its recorded hash.
pub fn verify_inputs(m: &RunManifest) -> Result<()> {
    for (path, hash) in &m.input_hashes {
        let bytes = formats::read_bytes(&PathBuf::from(path))?;
        if &sha256_hex(&bytes) != hash {
            return Err(CliError::Replay(format!("input {path} changed since the recorded run")));
        }
    }
    Ok(())
}

/// Lists outputs whose hashes differ between two runs.
pub fn diff_outputs(recorded: &RunManifest, replayed: &RunManifest) -> Vec<String> {
    let mut names: Vec<&String> = recorded.output_hashes.keys().chain(replayed.output_hashes.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .filter(|n| recorded.output_hashes.get(*n) != replayed.output_hashes.get(*n))
        .cloned()
        .collect()
}
