use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{class_of, factor_class, DatasetManifest, GestureSequence, NUM_CLASSES, NUM_ILLUMINATIONS};
use crate::error::{Error, Result};
use crate::imageio::is_frame_file;

/// Directory naming convention under `root/<class_dir>/<sequence_dir>/`.
///
/// Class directories end in the class index (`0003`, `class_3`) or spell out
/// `s<shape>_m<motion>`. In the Cambridge layout the sequence directory must
/// carry a 1-based `Set<k>` token naming the illumination; in the generic
/// layout an optional 0-based `illum<k>` token is read and defaults to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Cambridge,
    Generic,
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static pattern"))
}

/// `(class, shape, motion)` from a class directory name.
pub fn parse_class_dir(name: &str) -> Result<(u8, u8, u8)> {
    static FACTORED: OnceLock<Regex> = OnceLock::new();
    static TRAILING: OnceLock<Regex> = OnceLock::new();
    if let Some(c) = regex(&FACTORED, r"(?i)s(?:hape)?[_-]?(\d)[_-]?m(?:otion)?[_-]?(\d)").captures(name) {
        let shape: u8 = c[1].parse().expect("digit");
        let motion: u8 = c[2].parse().expect("digit");
        if shape < 3 && motion < 3 {
            return Ok((class_of(shape, motion), shape, motion));
        }
    } else if let Some(c) = regex(&TRAILING, r"(\d+)\D*$").captures(name) {
        if let Ok(class) = c[1].parse::<usize>() {
            if class < NUM_CLASSES {
                let (shape, motion) = factor_class(class as u8);
                return Ok((class as u8, shape, motion));
            }
        }
    }
    Err(Error::Dataset(format!("unparseable class label in directory {name:?}")))
}

/// Illumination index from a sequence directory name.
pub fn parse_illumination(name: &str, layout: Layout) -> Result<u8> {
    static SET: OnceLock<Regex> = OnceLock::new();
    static ILLUM: OnceLock<Regex> = OnceLock::new();
    match layout {
        Layout::Cambridge => {
            let c = regex(&SET, r"(?i)set[_-]?(\d+)").captures(name).ok_or_else(|| {
                Error::Dataset(format!("no Set<k> illumination token in {name:?}"))
            })?;
            let k: u8 = c[1]
                .parse()
                .map_err(|_| Error::Dataset(format!("bad illumination in {name:?}")))?;
            if k == 0 || k > NUM_ILLUMINATIONS {
                return Err(Error::Dataset(format!("illumination set {k} out of 1..=5 in {name:?}")));
            }
            Ok(k - 1)
        }
        Layout::Generic => match regex(&ILLUM, r"(?i)illum[_-]?(\d+)").captures(name) {
            None => Ok(0),
            Some(c) => {
                let k: u8 = c[1]
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad illumination in {name:?}")))?;
                if k >= NUM_ILLUMINATIONS {
                    return Err(Error::Dataset(format!("illumination {k} out of 0..5 in {name:?}")));
                }
                Ok(k)
            }
        },
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Frame files in a sequence directory, in lexicographic order.
pub(crate) fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect())
}

/// Enumerate every sequence under `root`, ordered by id (`class_dir/sequence_dir`).
pub fn scan_dataset(root: &Path, layout: Layout, min_frames: usize) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    let mut sequences = Vec::new();
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let class_name = class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let (class_id, shape_id, motion_id) = parse_class_dir(&class_name)?;
        for seq_dir in sorted_entries(&class_dir)?.into_iter().filter(|p| p.is_dir()) {
            let seq_name = seq_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let frame_paths = list_frames(&seq_dir)?;
            if frame_paths.is_empty() {
                continue;
            }
            let id = format!("{class_name}/{seq_name}");
            if frame_paths.len() < min_frames {
                return Err(Error::Dataset(format!(
                    "sequence {id} has {} frames, shorter than clip length {min_frames}",
                    frame_paths.len()
                )));
            }
            sequences.push(GestureSequence {
                illumination_id: parse_illumination(&seq_name, layout)?,
                id,
                frame_paths,
                class_id,
                shape_id,
                motion_id,
            });
        }
    }
    if sequences.is_empty() {
        return Err(Error::Dataset(format!("no sequences found under {}", root.display())));
    }
    sequences.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        sequences,
        split_assignment: BTreeMap::new(),
        seed: 0,
    })
}
