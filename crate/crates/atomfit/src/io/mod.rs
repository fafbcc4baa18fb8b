//! File formats and persistence: 16-bit binary graymap frames, background
//! library directories, dataset manifests, model files, and run
//! configuration. All formats are versioned and round-trip bit-exactly.

mod config;
mod dataset;
mod library;
mod manifest;
mod model;
mod pgm;

pub use config::RunConfig;
pub use dataset::{load_dataset, save_dataset, shot_file_name, LIBRARY_SUBDIR, MANIFEST_FILE, SHOTS_SUBDIR};
pub use library::{load_background_library, save_background_library};
pub use manifest::{
    DatasetManifest, DatasetMode, LibraryFileRef, ShotRecord, MANIFEST_FORMAT_VERSION,
};
pub use model::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use pgm::{read_frame, write_frame};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of a byte string; used for content hashes in
/// manifests and model files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> crate::error::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
