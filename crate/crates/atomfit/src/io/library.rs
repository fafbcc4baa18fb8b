//! Background library directory layout: entry `i` is the pair
//! `bg_{i:04}.pgm` / `dark_{i:04}.pgm`, indices contiguous from 0.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::BackgroundLibrary;

use super::pgm::{read_frame, write_frame};

pub fn bg_file_name(index: usize) -> String {
    format!("bg_{index:04}.pgm")
}

pub fn dark_file_name(index: usize) -> String {
    format!("dark_{index:04}.pgm")
}

pub fn save_background_library(dir: &Path, library: &BackgroundLibrary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, (bg, dark)) in library.entries().iter().enumerate() {
        write_frame(&dir.join(bg_file_name(i)), bg)?;
        write_frame(&dir.join(dark_file_name(i)), dark)?;
    }
    Ok(())
}

pub fn load_background_library(dir: &Path) -> Result<BackgroundLibrary> {
    let mut bgs: BTreeMap<usize, String> = BTreeMap::new();
    let mut darks: BTreeMap<usize, String> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(i) = parse_index(&name, "bg_") {
            bgs.insert(i, name);
        } else if let Some(i) = parse_index(&name, "dark_") {
            darks.insert(i, name);
        }
    }
    for (i, name) in &bgs {
        if !darks.contains_key(i) {
            return Err(Error::MissingPairMember { path: dir.to_path_buf(), name: name.clone() });
        }
    }
    for (i, name) in &darks {
        if !bgs.contains_key(i) {
            return Err(Error::MissingPairMember { path: dir.to_path_buf(), name: name.clone() });
        }
    }
    if bgs.is_empty() {
        return Err(Error::LibraryStructure {
            path: dir.to_path_buf(),
            detail: "no background pairs found".into(),
        });
    }
    // indices must be 0..n with no gaps so manifests can reference them
    for (expect, &found) in bgs.keys().enumerate() {
        if expect != found {
            return Err(Error::LibraryStructure {
                path: dir.to_path_buf(),
                detail: format!("missing entry index {expect}"),
            });
        }
    }

    let mut entries = Vec::with_capacity(bgs.len());
    let mut dims: Option<(usize, usize, String)> = None;
    for (i, bg_name) in &bgs {
        let dark_name = &darks[i];
        let bg = read_frame(&dir.join(bg_name))?;
        let dark = read_frame(&dir.join(dark_name))?;
        for (frame, name) in [(&bg, bg_name), (&dark, dark_name)] {
            match &dims {
                None => dims = Some((frame.width(), frame.height(), name.clone())),
                Some((w, h, first)) => {
                    if frame.width() != *w || frame.height() != *h {
                        return Err(Error::LibraryStructure {
                            path: dir.to_path_buf(),
                            detail: format!(
                                "{name} is {}x{}, but {first} is {w}x{h}",
                                frame.width(),
                                frame.height()
                            ),
                        });
                    }
                }
            }
        }
        entries.push((bg, dark));
    }
    BackgroundLibrary::new(entries)
}

fn parse_index(name: &str, prefix: &str) -> Option<usize> {
    let stem = name.strip_prefix(prefix)?.strip_suffix(".pgm")?;
    if stem.len() != 4 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}
