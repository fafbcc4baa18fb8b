//! Dataset manifest: everything needed to regenerate or audit a simulated
//! dataset. Truth labels live here, never in the frames themselves, so the
//! frames are indistinguishable from camera output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GaussianParams;
use crate::simulator::ParamRanges;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Whether the dataset is meant for single-image (atoms only) or
/// three-image training. Generation is identical; the mode is recorded so
/// training runs can verify they are fed what they expect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Ml1,
    Ml3,
}

/// One background-library entry as referenced by a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryFileRef {
    pub bg_file: String,
    pub dark_file: String,
    pub bg_sha256: String,
    pub dark_sha256: String,
}

/// Ground truth and provenance for one simulated shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: usize,
    pub atoms_file: String,
    pub atoms_sha256: String,
    /// Library entry whose (bg, dark) the fitters see.
    pub source_bg_index: usize,
    /// Library entry whose bg was used to synthesize the atoms frame.
    pub synth_bg_index: usize,
    pub truth: GaussianParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub mode: DatasetMode,
    pub ranges: ParamRanges,
    pub library_dir: String,
    pub library_files: Vec<LibraryFileRef>,
    pub shot_count: usize,
    pub shots: Vec<ShotRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::ManifestFormat(format!(
                "format version {} not supported (expected {MANIFEST_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.shot_count != self.shots.len() {
            return Err(Error::ManifestFormat(format!(
                "shot_count {} disagrees with {} shot records",
                self.shot_count,
                self.shots.len()
            )));
        }
        let n_lib = self.library_files.len();
        for s in &self.shots {
            if s.source_bg_index >= n_lib || s.synth_bg_index >= n_lib {
                return Err(Error::ManifestFormat(format!(
                    "shot {} references a library entry beyond {n_lib}",
                    s.index
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }
}
