use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spadfuse_core::akf::TriggerRecord;
use spadfuse_core::io::write_atomic;
use spadfuse_core::BandwidthReport;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub pipeline: String,
    pub config_hash: String,
    pub params_hash: String,
    /// File name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub bandwidth: Option<BandwidthReport>,
    pub trigger_log: Vec<TriggerRecord>,
    /// Wall-clock timings live in this sibling file, which is not checksummed.
    pub timing_file: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory that records a checksum for every file it writes.
#[derive(Debug)]
pub struct ArtifactDir {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    timing: BTreeMap<String, f64>,
    started: Instant,
}

impl ArtifactDir {
    pub fn create(dir: impl AsRef<Path>) -> CliResult<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            artifacts: BTreeMap::new(),
            timing: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(self.dir.join(name), bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timing.insert(stage.to_string(), t.elapsed().as_secs_f64());
        out
    }

    pub fn finish(
        mut self,
        pipeline: &str,
        config_hash: String,
        params_hash: String,
        bandwidth: Option<BandwidthReport>,
        trigger_log: Vec<TriggerRecord>,
    ) -> CliResult<Manifest> {
        self.timing.insert("total".into(), self.started.elapsed().as_secs_f64());
        let mut timing = serde_json::to_vec_pretty(&self.timing)?;
        timing.push(b'\n');
        write_atomic(self.dir.join(TIMING_FILE), &timing)?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            pipeline: pipeline.into(),
            config_hash,
            params_hash,
            artifacts: self.artifacts,
            bandwidth,
            trigger_log,
            timing_file: TIMING_FILE.into(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(self.dir.join(MANIFEST_FILE), &bytes)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> CliResult<Manifest> {
    let text = std::fs::read(dir.as_ref().join(MANIFEST_FILE))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Checks every listed artifact against its recorded checksum.
pub fn verify_manifest(dir: impl AsRef<Path>) -> CliResult<Manifest> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    for (name, sum) in &m.artifacts {
        let bytes = std::fs::read(dir.join(name))?;
        if &sha256_hex(&bytes) != sum {
            return Err(CliError::Core(spadfuse_core::Error::Format(format!("checksum mismatch for {name}"))));
        }
    }
    Ok(m)
}
