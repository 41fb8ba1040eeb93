//! Run manifests: which command ran, with which configuration digest and
//! seed, and the SHA-256 digest of every file it produced.
//!
//! Wall-clock stage times go to a `timings.json` sidecar instead of the
//! manifest so that reruns with the same configuration and seed produce
//! byte-identical manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gradhom_core::Result;

/// One produced file: path as recorded, content digest, and size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// The audit record emitted by every command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON serialization of the run parameters.
    pub config_digest: String,
    pub outputs: Vec<OutputRecord>,
    /// Relative residuals of a corrector solve, when the command ran one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl RunManifest {
    /// Starts a manifest for `command` with the digest of its serialized
    /// parameter record.
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let config_bytes = serde_json::to_vec(config)?;
        Ok(Self {
            tool: "gradhom".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_digest: sha256_hex(&config_bytes),
            outputs: Vec::new(),
            residuals: None,
        })
    }

    /// Digests a produced file and appends it to the output list. The path
    /// is recorded relative to `out_dir` so reruns into different
    /// directories still produce byte-identical manifests.
    pub fn record(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let recorded = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(OutputRecord {
            path: recorded.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn set_residuals(&mut self, residuals: &[f64]) {
        self.residuals = Some(residuals.to_vec());
    }

    /// Writes `manifest.json` into `out_dir` and returns its path.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Wall-clock stage timer backing the `timings.json` sidecar.
#[derive(Debug)]
pub struct StageTimer {
    started: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl Default for StageTimer {
    fn default() -> Self {
        Self::new()
    }
}

impl StageTimer {
    pub fn new() -> Self {
        let now = Instant::now();
        Self { started: now, last: now, stages: Vec::new() }
    }

    /// Closes the current stage and records its duration in seconds.
    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push((name.into(), now.duration_since(self.last).as_secs_f64()));
        self.last = now;
    }

    /// Writes `timings.json` into `out_dir` and returns its path.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Timings<'a> {
            total_seconds: f64,
            stages: Vec<StageRow<'a>>,
        }
        #[derive(Serialize)]
        struct StageRow<'a> {
            name: &'a str,
            seconds: f64,
        }
        let report = Timings {
            total_seconds: self.started.elapsed().as_secs_f64(),
            stages: self
                .stages
                .iter()
                .map(|(name, seconds)| StageRow { name, seconds: *seconds })
                .collect(),
        };
        let path = out_dir.join("timings.json");
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
