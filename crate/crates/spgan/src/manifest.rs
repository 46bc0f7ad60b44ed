//! Run manifests written beside every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{write, Result};

pub const GIT_DESCRIBE: &str = env!("SPGAN_GIT_DESCRIBE");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub git_describe: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Every setting the command used, including defaults.
    pub config: Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>, config: Value) -> Self {
        Self {
            tool: "spgan".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_describe: GIT_DESCRIBE.into(),
            command: command.into(),
            argv: argv.to_vec(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write(path, &bytes)
    }
}

/// `run_manifest.json` inside an output directory.
pub fn dir_manifest(dir: &Path) -> PathBuf {
    dir.join("run_manifest.json")
}

/// `<out>.manifest.json` beside a single output file.
pub fn file_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
