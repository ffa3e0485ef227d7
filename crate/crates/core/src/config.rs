//! Pipeline configuration as a single TOML document.
//!
//! Every field is optional in the file and defaults to the reference values;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionConfig;
use crate::refine::RefineConfig;
use crate::scene::PreprocessConfig;
use crate::simeval::EvalConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Also write one `class l w h cx cy cz heading score` file per frame.
    pub per_frame_txt: bool,
    /// Also write every track state as JSON lines.
    pub track_dump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Converts every per-second threshold to per-frame units.
    pub frame_rate: f64,
    pub seed: u64,
    /// Sequences processed concurrently; 0 uses every core.
    pub jobs: usize,
    pub preprocess: PreprocessConfig,
    pub fusion: FusionConfig,
    pub tracker: TrackerConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub export: ExportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_rate: 10.0,
            seed: 0,
            jobs: 0,
            preprocess: PreprocessConfig::default(),
            fusion: FusionConfig::default(),
            tracker: TrackerConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err("frame_rate must be positive".into());
        }
        if self.seed > i64::MAX as u64 {
            return Err("seed must fit in a signed 64-bit integer".into());
        }
        self.preprocess.validate()?;
        self.fusion.validate()?;
        self.tracker_config().validate()?;
        self.refine.validate()?;
        self.eval.validate()
    }

    /// Tracker settings with the pipeline frame rate applied.
    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            frame_rate: self.frame_rate,
            ..self.tracker
        }
    }
}
