//! Model persistence: a JSON manifest describing the architecture,
//! normalization constants, and provenance, plus a sibling weight blob of
//! 32-bit little-endian IEEE-754 reals in the documented layer order
//! (see `NetworkSpec::layout_description`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{NetworkSpec, Normalizer, Provenance, RegressorModel};
use crate::error::{Error, Result};

use super::sha256_hex;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    spec: NetworkSpec,
    normalizer: Normalizer,
    provenance: Provenance,
    /// Weight blob file name, relative to the manifest.
    weights_file: String,
    weights_sha256: String,
    weight_count: usize,
    layout: String,
}

fn weights_file_name(manifest_path: &Path) -> Result<String> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::ModelFormat("manifest path has no file name".into()))?;
    Ok(format!("{stem}.weights"))
}

/// Write `model` as `<path>` (JSON manifest) plus `<stem>.weights` next to
/// it. Weights are stored as f32; callers get identical files for
/// identical models.
pub fn save_model(path: &Path, model: &RegressorModel) -> Result<()> {
    model.spec.validate()?;
    model.check_weight_count()?;
    let mut blob = Vec::with_capacity(model.weights.len() * 4);
    for &w in &model.weights {
        blob.extend_from_slice(&(w as f32).to_le_bytes());
    }
    let weights_file = weights_file_name(path)?;
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        spec: model.spec.clone(),
        normalizer: model.normalizer.clone(),
        provenance: model.provenance.clone(),
        weights_file: weights_file.clone(),
        weights_sha256: sha256_hex(&blob),
        weight_count: model.weights.len(),
        layout: model.spec.layout_description(),
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(&weights_file), &blob)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RegressorModel> {
    let manifest: ModelManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "format version {} not supported (expected {MODEL_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.spec.validate()?;
    manifest.normalizer.validate()?;
    if manifest.weight_count != manifest.spec.weight_count() {
        return Err(Error::ModelFormat(format!(
            "manifest weight_count {} does not match architecture ({})",
            manifest.weight_count,
            manifest.spec.weight_count()
        )));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let blob = std::fs::read(dir.join(&manifest.weights_file))?;
    if blob.len() != manifest.weight_count * 4 {
        return Err(Error::ModelFormat(format!(
            "weight blob is {} bytes, expected {}",
            blob.len(),
            manifest.weight_count * 4
        )));
    }
    if sha256_hex(&blob) != manifest.weights_sha256 {
        return Err(Error::ModelFormat("weight blob checksum mismatch".into()));
    }
    let weights: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::ModelFormat("non-finite weight in blob".into()));
    }
    Ok(RegressorModel {
        spec: manifest.spec,
        weights,
        normalizer: manifest.normalizer,
        provenance: manifest.provenance,
    })
}
