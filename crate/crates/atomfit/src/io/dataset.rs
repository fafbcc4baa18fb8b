//! Self-contained dataset directories: a manifest, the background library,
//! and one atoms frame per shot. Loading verifies content hashes so a
//! manifest can vouch for the exact bytes it was generated with.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::FrameTriple;
use crate::simulator::{BackgroundLibrary, LabeledShot, ParamRanges};

use super::library::{bg_file_name, dark_file_name, load_background_library, save_background_library};
use super::manifest::{DatasetManifest, DatasetMode, LibraryFileRef, ShotRecord, MANIFEST_FORMAT_VERSION};
use super::pgm::{read_frame, write_frame};
use super::sha256_file;

pub const MANIFEST_FILE: &str = "dataset.json";
pub const LIBRARY_SUBDIR: &str = "backgrounds";
pub const SHOTS_SUBDIR: &str = "shots";

pub fn shot_file_name(index: usize) -> String {
    format!("shot_{index:06}.pgm")
}

/// Write a complete dataset directory and return its manifest (also
/// written as `dataset.json` inside `dir`).
#[allow(clippy::too_many_arguments)]
pub fn save_dataset(
    dir: &Path,
    library: &BackgroundLibrary,
    shots: &[LabeledShot],
    ranges: &ParamRanges,
    mode: DatasetMode,
    seed: u64,
    config_hash: &str,
) -> Result<DatasetManifest> {
    if shots.is_empty() {
        return Err(Error::DatasetTooSmall { got: 0, need: 1 });
    }
    let lib_dir = dir.join(LIBRARY_SUBDIR);
    let shot_dir = dir.join(SHOTS_SUBDIR);
    std::fs::create_dir_all(&shot_dir)?;
    save_background_library(&lib_dir, library)?;

    let mut library_files = Vec::with_capacity(library.len());
    for i in 0..library.len() {
        library_files.push(LibraryFileRef {
            bg_file: bg_file_name(i),
            dark_file: dark_file_name(i),
            bg_sha256: sha256_file(&lib_dir.join(bg_file_name(i)))?,
            dark_sha256: sha256_file(&lib_dir.join(dark_file_name(i)))?,
        });
    }

    let mut records = Vec::with_capacity(shots.len());
    for (i, shot) in shots.iter().enumerate() {
        let name = shot_file_name(i);
        let path = shot_dir.join(&name);
        write_frame(&path, &shot.triple.atoms)?;
        records.push(ShotRecord {
            index: i,
            atoms_file: format!("{SHOTS_SUBDIR}/{name}"),
            atoms_sha256: sha256_file(&path)?,
            source_bg_index: shot.source_bg_index,
            synth_bg_index: shot.synth_bg_index,
            truth: shot.truth,
        });
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        seed,
        width: library.width(),
        height: library.height(),
        mode,
        ranges: *ranges,
        library_dir: LIBRARY_SUBDIR.to_string(),
        library_files,
        shot_count: shots.len(),
        shots: records,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Load a dataset directory back into labeled shots, verifying every
/// content hash recorded in the manifest.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, BackgroundLibrary, Vec<LabeledShot>)> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let lib_dir = dir.join(&manifest.library_dir);
    let library = load_background_library(&lib_dir)?;
    if library.len() != manifest.library_files.len() {
        return Err(Error::ManifestFormat(format!(
            "library has {} entries, manifest lists {}",
            library.len(),
            manifest.library_files.len()
        )));
    }
    for (i, f) in manifest.library_files.iter().enumerate() {
        if sha256_file(&lib_dir.join(&f.bg_file))? != f.bg_sha256
            || sha256_file(&lib_dir.join(&f.dark_file))? != f.dark_sha256
        {
            return Err(Error::ManifestFormat(format!(
                "library entry {i} does not match its recorded hash"
            )));
        }
    }

    let mut shots = Vec::with_capacity(manifest.shots.len());
    for rec in &manifest.shots {
        let path = dir.join(&rec.atoms_file);
        if sha256_file(&path)? != rec.atoms_sha256 {
            return Err(Error::ManifestFormat(format!(
                "{} does not match its recorded hash",
                rec.atoms_file
            )));
        }
        let atoms = read_frame(&path)?;
        let (bg, dark) = library.entry(rec.source_bg_index);
        shots.push(LabeledShot {
            triple: FrameTriple::new(atoms, bg.clone(), dark.clone())?,
            truth: rec.truth,
            source_bg_index: rec.source_bg_index,
            synth_bg_index: rec.synth_bg_index,
        });
    }
    Ok((manifest, library, shots))
}
