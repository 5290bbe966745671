use ndarray::Array2;

use super::{DatasetManifest, SubVideo};
use crate::clip::{ClipKind, VideoClip};
use crate::error::{Error, Result};
use crate::imageio::{read_gray, ColorPolicy};
use crate::resample::resize_bilinear;

/// Decodes sub-videos into single-channel scene clips of a fixed size.
#[derive(Debug, Clone)]
pub struct ClipLoader<'a> {
    manifest: &'a DatasetManifest,
    height: usize,
    width: usize,
    policy: ColorPolicy,
}

impl<'a> ClipLoader<'a> {
    pub fn new(manifest: &'a DatasetManifest, height: usize, width: usize, policy: ColorPolicy) -> Self {
        Self {
            manifest,
            height,
            width,
            policy,
        }
    }

    /// `to_clip`: decode, collapse to one channel, resize bilinearly when the
    /// source differs from the target, and clamp to [0, 1].
    pub fn load(&self, sub: &SubVideo) -> Result<VideoClip> {
        let seq = self
            .manifest
            .sequence(&sub.parent_id)
            .ok_or_else(|| Error::Dataset(format!("unknown sequence {}", sub.parent_id)))?;
        let mut source_dim = None;
        let mut frames: Vec<Array2<f64>> = Vec::with_capacity(sub.frame_indices.len());
        for &i in &sub.frame_indices {
            let path = seq.frame_paths.get(i).ok_or_else(|| {
                Error::Dataset(format!("frame index {i} out of range for {}", seq.id))
            })?;
            let img = read_gray(path, self.policy)?;
            match source_dim {
                None => source_dim = Some(img.dim()),
                Some(d) if d != img.dim() => {
                    return Err(Error::Geometry(format!(
                        "{} is {:?}, earlier frames of {} are {:?}",
                        path.display(),
                        img.dim(),
                        seq.id,
                        d
                    )))
                }
                Some(_) => {}
            }
            let mut img = resize_bilinear(img.view(), (self.height, self.width));
            img.mapv_inplace(|v| v.clamp(0.0, 1.0));
            frames.push(img);
        }
        VideoClip::from_frames(&frames, ClipKind::Scene, Some(sub.label))
    }
}
