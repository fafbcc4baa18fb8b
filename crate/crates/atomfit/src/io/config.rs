//! Run configuration: one JSON document holding every tolerance,
//! hyperparameter, and size for a pipeline run. Every field has a default;
//! unknown keys are rejected so typos cannot silently fall back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::Hyperparams;
use crate::error::{Error, Result};
use crate::lsfit::FitConfig;
use crate::simulator::{ParamRanges, SynthBackgroundConfig};

use super::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Frame width in pixels.
    pub width: usize,
    /// Frame height in pixels.
    pub height: usize,
    /// Number of shots for `simulate` / `bench`.
    pub shots: usize,
    /// Entries generated by `synth-bg`.
    pub library_entries: usize,
    /// Ground-truth sampling ranges.
    pub ranges: ParamRanges,
    /// Least-squares fitter settings.
    pub fit: FitConfig,
    /// Training settings (epochs, batch size, optimizer).
    pub train: Hyperparams,
    /// Fraction of shots used for training; the rest validate.
    pub train_split: f64,
    /// Synthetic background generation settings.
    pub synth_bg: SynthBackgroundConfig,
    /// Untimed warm-up fits per method before benchmarking.
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            shots: 500,
            library_entries: 8,
            ranges: ParamRanges::default(),
            fit: FitConfig::default(),
            train: Hyperparams::default(),
            train_split: 0.9,
            synth_bg: SynthBackgroundConfig::default(),
            bench_warmup: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        self.fit.validate()?;
        if self.width < crate::imaging::MIN_FRAME_DIM || self.height < crate::imaging::MIN_FRAME_DIM
        {
            return Err(Error::Config(format!(
                "frame size {}x{} is below the minimum",
                self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.train_split) {
            return Err(Error::Config("train_split must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Content hash stamped into every produced artifact, so outputs can be
    /// traced back to the exact configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}
