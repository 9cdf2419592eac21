//! Provenance record written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub key: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Every option in effect, defaults included; usable as a config file for a rerun.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    /// Processing stages that ran, in order.
    pub stages: Vec<String>,
    pub wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        let seed = config.get("seed").and_then(|s| s.parse().ok());
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: Vec::new(),
            seed,
            outputs: Vec::new(),
            stages: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    /// Digests every configured input file among `keys`.
    pub fn digest_inputs(&mut self, keys: &[&str]) -> Result<()> {
        for &key in keys {
            if let Some(path) = self.config.get(key) {
                let sha256 = sha256_file(Path::new(path))?;
                self.inputs.push(InputDigest {
                    key: key.to_string(),
                    path: path.clone(),
                    sha256,
                });
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for input in &self.inputs {
            if sha256_file(Path::new(&input.path))? != input.sha256 {
                changed.push(input.path.clone());
            }
        }
        Ok(changed)
    }
}
