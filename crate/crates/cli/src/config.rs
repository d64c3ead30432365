use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spadfuse_core::akf::FusionConfig;
use spadfuse_core::events::EventSimConfig;
use spadfuse_core::rng::substream_seed;
use spadfuse_core::{SceneSpec, SensorParams};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Simulate,
    Deblur,
    Fuse,
    Snr,
    Mtf,
    Eval,
    #[default]
    E2e,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Thresholds for the adaptive sweep; empty picks a log grid from the
    /// uncertainty traces of the full-rate and events-only runs.
    pub u_sweep: Vec<f64>,
    pub sweep_points: usize,
    /// MTF radii in pixels; empty picks a default ladder.
    pub mtf_radii: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            u_sweep: Vec::new(),
            sweep_points: 16,
            mtf_radii: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub scene: SceneSpec,
    #[serde(default)]
    pub params: SensorParams,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub event_sim: EventSimConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Seeds of the named random sub-streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub scene: u64,
    pub spad: u64,
    pub event: u64,
}

impl RunConfig {
    pub fn new(scene: SceneSpec, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            scene,
            params: SensorParams::default(),
            fusion: FusionConfig::default(),
            event_sim: EventSimConfig::default(),
            eval: EvalConfig::default(),
            pipeline: Pipeline::default(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.fusion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.scene.duration() > 0.0) {
            return Err(CliError::Config("scene duration must be > 0".into()));
        }
        let window = self.fusion.n_bins_per_frame as f64 * self.params.t_bin;
        if self.scene.duration() < window {
            return Err(CliError::Config(format!(
                "scene duration {} is shorter than one aggregate window ({window})",
                self.scene.duration()
            )));
        }
        if self.eval.sweep_points < 2 {
            return Err(CliError::Config("eval.sweep_points must be >= 2".into()));
        }
        if self.eval.u_sweep.iter().any(|u| u.is_nan() || *u < 0.0) {
            return Err(CliError::Config("eval.u_sweep values must be >= 0".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            scene: substream_seed(self.seed, "scene"),
            spad: substream_seed(self.seed, "spad"),
            event: substream_seed(self.seed, "event"),
        }
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        hex::encode(Sha256::digest(c.to_json().as_bytes()))
    }
}
