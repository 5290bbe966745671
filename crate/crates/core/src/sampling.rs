//! Frame-wise down-sampling codecs for raw measurements.
//!
//! Every method except `resize` and `none` is driven by a [`SamplingMask`]
//! built once per experiment and applied identically to every frame.

use ndarray::{Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::resample::resize_bilinear;
use crate::seed::labeled_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    #[default]
    None,
    /// Bilinear resize to the target.
    Resize,
    /// Center-crop to a multiple of the target, then keep every `step`-th pixel.
    Uniform,
    /// Gather `target_w · target_h` random pixels and arrange them by a fixed permutation.
    Random,
    /// Resize to the target, then zero all but a random `keep_fraction` of positions.
    Erase,
}

impl SampleMethod {
    pub fn label(&self) -> &'static str {
        match self {
            SampleMethod::None => "None",
            SampleMethod::Resize => "Resize",
            SampleMethod::Uniform => "Uniform sample",
            SampleMethod::Random => "Random sample",
            SampleMethod::Erase => "Erase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub method: SampleMethod,
    pub target_w: usize,
    pub target_h: usize,
    #[serde(default = "default_keep_fraction")]
    pub keep_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_keep_fraction() -> f64 {
    1.0
}

impl SampleSpec {
    pub fn none(source_w: usize, source_h: usize) -> Self {
        Self::new(SampleMethod::None, source_w, source_h)
    }

    pub fn new(method: SampleMethod, target_w: usize, target_h: usize) -> Self {
        Self {
            method,
            target_w,
            target_h,
            keep_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn erase(target_w: usize, target_h: usize, keep_fraction: f64) -> Self {
        Self {
            keep_fraction,
            ..Self::new(SampleMethod::Erase, target_w, target_h)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Output frame size as `(height, width)`.
    pub fn output_dim(&self) -> (usize, usize) {
        (self.target_h, self.target_w)
    }
}

/// A fixed pixel selection for one experiment.
///
/// Coordinates are `(row, col)`. For `uniform` and `random` they index the
/// source frame; for `erase` they index the resized frame and list the
/// positions that survive. `destinations[k]` is the row-major output slot of
/// `coords[k]` (random only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub method: SampleMethod,
    /// Source frame size `(height, width)`.
    pub source: (usize, usize),
    /// Output frame size `(height, width)`.
    pub output: (usize, usize),
    pub coords: Vec<(usize, usize)>,
    pub destinations: Vec<usize>,
    pub seed: u64,
}

impl SamplingMask {
    /// Number of values carried by each output frame (the pixel budget).
    pub fn valid_pixels(&self) -> usize {
        match self.method {
            SampleMethod::None | SampleMethod::Resize => self.output.0 * self.output.1,
            SampleMethod::Uniform | SampleMethod::Random | SampleMethod::Erase => self.coords.len(),
        }
    }
}

/// Build the mask for `spec` over a source frame of `source = (width, height)`.
pub fn make_mask(spec: &SampleSpec, source: (usize, usize)) -> Result<SamplingMask> {
    let (src_w, src_h) = source;
    let (tw, th) = (spec.target_w, spec.target_h);
    if tw == 0 || th == 0 || src_w == 0 || src_h == 0 {
        return Err(Error::InvalidArgument("zero-sized sampling geometry".into()));
    }
    if tw > src_w || th > src_h {
        return Err(Error::InvalidArgument(format!(
            "target ({tw},{th}) larger than source ({src_w},{src_h})"
        )));
    }
    if !(spec.keep_fraction > 0.0 && spec.keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction {} outside (0, 1]",
            spec.keep_fraction
        )));
    }
    let mut mask = SamplingMask {
        method: spec.method,
        source: (src_h, src_w),
        output: (th, tw),
        coords: Vec::new(),
        destinations: Vec::new(),
        seed: spec.seed,
    };
    match spec.method {
        SampleMethod::None => {
            if (tw, th) != (src_w, src_h) {
                return Err(Error::InvalidArgument(format!(
                    "method none needs target equal to source ({src_w},{src_h})"
                )));
            }
        }
        SampleMethod::Resize => {}
        SampleMethod::Uniform => {
            let step = (src_w / tw).min(src_h / th);
            let (crop_w, crop_h) = (tw * step, th * step);
            let (x0, y0) = ((src_w - crop_w) / 2, (src_h - crop_h) / 2);
            mask.coords = (0..th)
                .flat_map(|i| (0..tw).map(move |j| (y0 + i * step, x0 + j * step)))
                .collect();
        }
        SampleMethod::Random => {
            let n = tw * th;
            let mut r = labeled_rng(spec.seed, "sampling/random/select");
            let mut picked = index::sample(&mut r, src_w * src_h, n).into_vec();
            picked.sort_unstable();
            mask.coords = picked.into_iter().map(|k| (k / src_w, k % src_w)).collect();
            let mut dest: Vec<usize> = (0..n).collect();
            dest.shuffle(&mut labeled_rng(spec.seed, "sampling/random/arrange"));
            mask.destinations = dest;
        }
        SampleMethod::Erase => {
            let area = tw * th;
            let keep = (spec.keep_fraction * area as f64).round() as usize;
            let mut r = labeled_rng(spec.seed, "sampling/erase/keep");
            let mut kept = index::sample(&mut r, area, keep).into_vec();
            kept.sort_unstable();
            mask.coords = kept.into_iter().map(|k| (k / tw, k % tw)).collect();
        }
    }
    Ok(mask)
}

pub fn downsample_frame(frame: ArrayView2<'_, f64>, mask: &SamplingMask) -> Result<Array2<f64>> {
    if frame.dim() != mask.source {
        return Err(Error::Geometry(format!(
            "frame {:?} does not match sampling source {:?}",
            frame.dim(),
            mask.source
        )));
    }
    let out = match mask.method {
        SampleMethod::None => frame.to_owned(),
        SampleMethod::Resize => resize_bilinear(frame, mask.output),
        SampleMethod::Uniform => Array2::from_shape_vec(
            mask.output,
            mask.coords.iter().map(|&(r, c)| frame[[r, c]]).collect(),
        )
        .expect("coords fill the output"),
        SampleMethod::Random => {
            let mut out = Array2::zeros(mask.output);
            let flat = out.as_slice_mut().expect("standard layout");
            for (&(r, c), &d) in mask.coords.iter().zip(&mask.destinations) {
                flat[d] = frame[[r, c]];
            }
            out
        }
        SampleMethod::Erase => {
            let resized = resize_bilinear(frame, mask.output);
            let mut out = Array2::zeros(mask.output);
            for &(r, c) in &mask.coords {
                out[[r, c]] = resized[[r, c]];
            }
            out
        }
    };
    Ok(out)
}

/// Apply one mask to every frame; frame count and label are preserved.
pub fn downsample_clip(clip: &VideoClip, mask: &SamplingMask) -> Result<VideoClip> {
    clip.map_frames(clip.kind(), |_, frame| downsample_frame(frame, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::ClipKind;
    use ndarray::Array3;
    use std::collections::HashSet;

    const SRC: (usize, usize) = (320, 240);

    fn ramp() -> Array2<f64> {
        Array2::from_shape_fn((240, 320), |(i, j)| (i * 320 + j) as f64)
    }

    #[test]
    fn uniform_mask_is_centered_stride_three() {
        let mask = make_mask(&SampleSpec::new(SampleMethod::Uniform, 100, 75), SRC).unwrap();
        assert_eq!(mask.coords.len(), 7500);
        assert_eq!(mask.coords[0], (7, 10));
        assert_eq!(*mask.coords.last().unwrap(), (7 + 3 * 74, 10 + 3 * 99));
        let frame = ramp();
        let out = downsample_frame(frame.view(), &mask).unwrap();
        for i in 0..75 {
            for j in 0..100 {
                assert_eq!(out[[i, j]], frame[[7 + 3 * i, 10 + 3 * j]]);
            }
        }
    }

    #[test]
    fn random_mask_is_unique_and_seeded() {
        let spec = SampleSpec::new(SampleMethod::Random, 100, 75).with_seed(5);
        let a = make_mask(&spec, SRC).unwrap();
        assert_eq!(a, make_mask(&spec, SRC).unwrap());
        assert_ne!(a, make_mask(&spec.with_seed(6), SRC).unwrap());
        let unique: HashSet<_> = a.coords.iter().collect();
        assert_eq!(unique.len(), 7500);
        let dests: HashSet<_> = a.destinations.iter().collect();
        assert_eq!(dests.len(), 7500);
        assert!(a.coords.iter().all(|&(r, c)| r < 240 && c < 320));
    }

    #[test]
    fn random_output_gathers_every_selected_pixel() {
        let mask = make_mask(&SampleSpec::new(SampleMethod::Random, 100, 75).with_seed(1), SRC).unwrap();
        let frame = ramp();
        let out = downsample_frame(frame.view(), &mask).unwrap();
        let mut got: Vec<f64> = out.iter().copied().collect();
        let mut want: Vec<f64> = mask.coords.iter().map(|&(r, c)| frame[[r, c]]).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn erase_keeps_a_quarter_in_place() {
        let mask = make_mask(&SampleSpec::erase(200, 150, 0.25).with_seed(3), SRC).unwrap();
        assert_eq!(mask.valid_pixels(), 7500);
        let frame = Array2::from_elem((240, 320), 0.5);
        let out = downsample_frame(frame.view(), &mask).unwrap();
        assert_eq!(out.dim(), (150, 200));
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 7500);
        for &(r, c) in &mask.coords {
            assert!((out[[r, c]] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_budgets() {
        let m = make_mask(&SampleSpec::new(SampleMethod::Resize, 100, 75), SRC).unwrap();
        assert_eq!(m.valid_pixels(), 7500);
        let m = make_mask(&SampleSpec::new(SampleMethod::Resize, 50, 37), SRC).unwrap();
        assert_eq!(m.valid_pixels(), 1850);
        let out = downsample_frame(Array2::from_elem((240, 320), 0.2).view(), &m).unwrap();
        assert_eq!(out.dim(), (37, 50));
        assert!(out.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn invalid_specs() {
        assert!(make_mask(&SampleSpec::new(SampleMethod::Resize, 400, 75), SRC).is_err());
        assert!(make_mask(&SampleSpec::erase(200, 150, 0.0), SRC).is_err());
        assert!(make_mask(&SampleSpec::erase(200, 150, 1.5), SRC).is_err());
        assert!(make_mask(&SampleSpec::new(SampleMethod::None, 100, 75), SRC).is_err());
    }

    #[test]
    fn geometry_mismatch() {
        let m = make_mask(&SampleSpec::new(SampleMethod::Resize, 10, 10), (20, 20)).unwrap();
        assert!(downsample_frame(Array2::zeros((21, 20)).view(), &m).is_err());
    }

    #[test]
    fn clip_shape_and_label_preserved() {
        let clip = VideoClip::new(Array3::from_elem((8, 240, 320), 0.3), ClipKind::Raw, Some(2)).unwrap();
        let m = make_mask(&SampleSpec::new(SampleMethod::Resize, 100, 75), SRC).unwrap();
        let out = downsample_clip(&clip, &m).unwrap();
        assert_eq!(out.frames().dim(), (8, 75, 100));
        assert_eq!(out.label(), Some(2));
    }
}
