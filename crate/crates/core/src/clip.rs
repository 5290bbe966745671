use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of frames per clip.
pub const CLIP_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipKind {
    Scene,
    Raw,
    Reconstructed,
}

/// A stack of `L × H × W` single-channel frames.
///
/// Scene and reconstructed clips hold values in [0, 1]. Raw clips hold
/// nonnegative sensor intensities, which can exceed 1 once noise is added.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Array3<f64>,
    kind: ClipKind,
    label: Option<u8>,
}

impl VideoClip {
    pub fn new(frames: Array3<f64>, kind: ClipKind, label: Option<u8>) -> Result<Self> {
        if frames.len_of(Axis(0)) == 0 {
            return Err(Error::InvalidArgument("clip has no frames".into()));
        }
        let upper = match kind {
            ClipKind::Raw => f64::INFINITY,
            ClipKind::Scene | ClipKind::Reconstructed => 1.0,
        };
        if let Some(v) = frames.iter().find(|v| !(**v >= 0.0 && **v <= upper)) {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} clip value {v} outside [0, {upper}]"
            )));
        }
        Ok(Self {
            frames,
            kind,
            label,
        })
    }

    pub fn from_frames(frames: &[Array2<f64>], kind: ClipKind, label: Option<u8>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("clip has no frames".into()))?;
        let (h, w) = first.dim();
        if let Some(f) = frames.iter().find(|f| f.dim() != (h, w)) {
            return Err(Error::Geometry(format!(
                "frame of size {:?} in a clip of {h}×{w} frames",
                f.dim()
            )));
        }
        let mut stack = Array3::zeros((frames.len(), h, w));
        for (mut dst, src) in stack.outer_iter_mut().zip(frames) {
            dst.assign(src);
        }
        Self::new(stack, kind, label)
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_dim(&self) -> (usize, usize) {
        let (_, h, w) = self.frames.dim();
        (h, w)
    }

    pub fn frame(&self, i: usize) -> ArrayView2<'_, f64> {
        self.frames.index_axis(Axis(0), i)
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<f64> {
        self.frames
    }

    pub fn kind(&self) -> ClipKind {
        self.kind
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn with_label(mut self, label: Option<u8>) -> Self {
        self.label = label;
        self
    }

    /// Apply `f` to every frame, producing a clip of `kind`.
    pub fn map_frames<F>(&self, kind: ClipKind, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    {
        let frames = self
            .frames
            .outer_iter()
            .enumerate()
            .map(|(i, frame)| f(i, frame))
            .collect::<Result<Vec<_>>>()?;
        Self::from_frames(&frames, kind, self.label)
    }
}
