//! Run manifest: the resolved config plus the code version that ran it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{io_err, CliError, Result};

pub const CODE_VERSION: &str = concat!("fracpe ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub code_version: String,
    pub experiment: String,
    pub config_sha256: String,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            experiment: cfg.experiment().name().to_string(),
            config_sha256: sha256_hex(&cfg.canonical_json()),
            config: cfg.portable(),
        }
    }

    /// Hash embedded in every report of the run.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Resume(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Resume(format!("{} is not a run manifest: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(format!("writing {}", path.display())))
    }

    /// Refuse unless `cfg` and the running binary match this manifest.
    pub fn check_matches(&self, cfg: &RunConfig) -> Result<()> {
        if self.code_version != CODE_VERSION {
            return Err(CliError::Resume(format!(
                "run was produced by {} but this is {CODE_VERSION}",
                self.code_version
            )));
        }
        let h = sha256_hex(&cfg.canonical_json());
        if h != self.config_sha256 {
            return Err(CliError::Resume(format!(
                "config differs from the one recorded in the manifest (sha256 {h} vs {}); start a new run instead",
                self.config_sha256
            )));
        }
        Ok(())
    }
}
