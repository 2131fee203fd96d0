use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// SHA-256 over `"blob <len>\0" + bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolved configuration of a run plus hashes of what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub metrics_file: String,
    pub metrics_hash: String,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, metrics_path: &Path) -> Result<Self> {
        let metrics = std::fs::read(metrics_path).map_err(|e| Error::io(metrics_path, e))?;
        Ok(Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            config_hash: config_hash(cfg)?,
            metrics_file: metrics_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            metrics_hash: content_hash(&metrics),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if config_hash(&m.config)? != m.config_hash {
            return Err(Error::Schema(format!("{}: config does not match its hash", path.display())));
        }
        m.config.validate()?;
        Ok(m)
    }
}

/// Hash of the configuration with `output_dir` cleared, so the same run
/// written elsewhere hashes the same.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = Default::default();
    Ok(content_hash(serde_json::to_string(&c)?.as_bytes()))
}

/// Re-runs a manifest's configuration into `output_dir` and reports whether
/// the new metrics file is byte-identical to the recorded one.
pub fn rerun(manifest: &Manifest, output_dir: &Path) -> Result<(super::ExperimentOutput, bool)> {
    let mut cfg = manifest.config.clone();
    cfg.output_dir = output_dir.to_path_buf();
    let out = super::run_experiment(&cfg)?;
    let bytes = std::fs::read(&out.metrics_path).map_err(|e| Error::io(&out.metrics_path, e))?;
    let same = content_hash(&bytes) == manifest.metrics_hash;
    Ok((out, same))
}
