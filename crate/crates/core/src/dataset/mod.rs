//! Gesture datasets: scanning, stratified splits, sub-video extraction, and
//! clip loading.
//!
//! Class indices are row-major over (shape, motion): `class = 3·shape + motion`.

mod fixture;
mod loader;
mod scan;
mod split;
mod subvideo;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use fixture::SyntheticGestures;
pub use loader::ClipLoader;
pub use scan::{parse_class_dir, parse_illumination, scan_dataset, Layout};
pub use split::{split_dataset, SplitConfig};
pub use subvideo::{extract_subvideos, subvideo_count};

pub const NUM_CLASSES: usize = 9;
pub const NUM_SHAPES: u8 = 3;
pub const NUM_MOTIONS: u8 = 3;
pub const NUM_ILLUMINATIONS: u8 = 5;

pub fn class_of(shape: u8, motion: u8) -> u8 {
    NUM_MOTIONS * shape + motion
}

/// `(shape, motion)` of a class index.
pub fn factor_class(class_id: u8) -> (u8, u8) {
    (class_id / NUM_MOTIONS, class_id % NUM_MOTIONS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSequence {
    pub id: String,
    pub frame_paths: Vec<PathBuf>,
    pub class_id: u8,
    pub shape_id: u8,
    pub motion_id: u8,
    pub illumination_id: u8,
}

impl GestureSequence {
    pub fn n_frames(&self) -> usize {
        self.frame_paths.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub sequences: Vec<GestureSequence>,
    pub split_assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn sequence(&self, id: &str) -> Option<&GestureSequence> {
        self.sequences
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.sequences[i])
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split_assignment.get(id).copied()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &GestureSequence> + '_ {
        self.sequences
            .iter()
            .filter(move |s| self.split_of(&s.id) == Some(split))
    }

    pub fn class_count(&self) -> usize {
        let mut seen = [false; 256];
        for s in &self.sequences {
            seen[s.class_id as usize] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    pub fn illumination_count(&self) -> usize {
        let mut seen = [false; 256];
        for s in &self.sequences {
            seen[s.illumination_id as usize] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// JSON export: `{root, seed, sequences: [{id, class, shape, motion, illumination, n_frames, split}]}`.
    pub fn to_json(&self) -> crate::Result<String> {
        let doc = ManifestFile {
            root: self.root.clone(),
            seed: self.seed,
            sequences: self
                .sequences
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id.clone(),
                    class: s.class_id,
                    shape: s.shape_id,
                    motion: s.motion_id,
                    illumination: s.illumination_id,
                    n_frames: s.n_frames(),
                    split: self.split_of(&s.id),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Import a JSON manifest, re-listing frames under `root/<id>/`.
    pub fn from_json(text: &str) -> crate::Result<Self> {
        let doc: ManifestFile = serde_json::from_str(text)?;
        let mut sequences = Vec::with_capacity(doc.sequences.len());
        let mut split_assignment = BTreeMap::new();
        for e in doc.sequences {
            let frame_paths = scan::list_frames(&doc.root.join(&e.id))?;
            if frame_paths.len() != e.n_frames {
                return Err(crate::Error::Dataset(format!(
                    "sequence {} lists {} frames, found {} on disk",
                    e.id,
                    e.n_frames,
                    frame_paths.len()
                )));
            }
            if e.class != class_of(e.shape, e.motion) {
                return Err(crate::Error::Dataset(format!(
                    "sequence {}: class {} does not match shape {} / motion {}",
                    e.id, e.class, e.shape, e.motion
                )));
            }
            if let Some(split) = e.split {
                split_assignment.insert(e.id.clone(), split);
            }
            sequences.push(GestureSequence {
                id: e.id,
                frame_paths,
                class_id: e.class,
                shape_id: e.shape,
                motion_id: e.motion,
                illumination_id: e.illumination,
            });
        }
        sequences.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            root: doc.root,
            sequences,
            split_assignment,
            seed: doc.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    root: PathBuf,
    #[serde(default)]
    seed: u64,
    sequences: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    class: u8,
    shape: u8,
    motion: u8,
    illumination: u8,
    n_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Frame indices of one fixed-length sample of a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubVideo {
    pub parent_id: String,
    pub frame_indices: Vec<usize>,
    pub label: u8,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_factoring_is_row_major() {
        for c in 0..9u8 {
            let (s, m) = factor_class(c);
            assert_eq!(class_of(s, m), c);
        }
        assert_eq!(factor_class(1), (0, 1));
        assert_eq!(factor_class(4), (1, 1));
        assert_eq!(factor_class(7), (2, 1));
    }
}
