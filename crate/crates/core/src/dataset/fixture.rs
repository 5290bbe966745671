//! Procedurally rendered gesture sequences for tests and desk-scale runs.
//!
//! Three hand silhouettes (flat, spread, V) crossed with three motions
//! (leftward, rightward, contract), under five illumination prototypes.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{factor_class, NUM_ILLUMINATIONS};
use crate::error::{Error, Result};
use crate::imageio::write_png8;
use crate::seed::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGestures {
    pub classes: Vec<u8>,
    pub sequences_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticGestures {
    fn default() -> Self {
        Self {
            classes: (0..9).collect(),
            sequences_per_class: 5,
            min_frames: 16,
            max_frames: 24,
            height: 48,
            width: 64,
            seed: 0,
        }
    }
}

/// Per-sequence nuisance parameters.
struct Pose {
    x0: f64,
    y0: f64,
    size: f64,
    tilt: f64,
}

impl SyntheticGestures {
    pub fn class_dir(class: u8) -> String {
        format!("{class:04}")
    }

    pub fn sequence_dir(illumination: u8, index: usize) -> String {
        format!("Set{}_{index:03}", illumination + 1)
    }

    fn illumination_of(index: usize) -> u8 {
        (index % NUM_ILLUMINATIONS as usize) as u8
    }

    /// Render sequence `index` of `class`; illumination cycles with `index`.
    pub fn render(&self, class: u8, index: usize) -> Vec<Array2<f64>> {
        let illumination = Self::illumination_of(index);
        let mut r = labeled_rng(self.seed, &format!("fixture/{class}/{index}"));
        let n = r.random_range(self.min_frames..=self.max_frames.max(self.min_frames));
        let (h, w) = (self.height as f64, self.width as f64);
        let pose = Pose {
            x0: r.random_range(-0.04..0.04),
            y0: r.random_range(-0.05..0.05),
            size: r.random_range(0.17..0.21) * h,
            tilt: r.random_range(-0.15..0.15),
        };
        let (shape, motion) = factor_class(class);
        (0..n)
            .map(|t| {
                let p = if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
                let (cx, scale) = match motion {
                    0 => (0.68 - 0.36 * p, 1.0),
                    1 => (0.32 + 0.36 * p, 1.0),
                    _ => (0.5, 1.15 - 0.5 * p),
                };
                let cx = (cx + pose.x0) * w;
                let cy = (0.55 + pose.y0) * h;
                let radius = pose.size * scale;
                Array2::from_shape_fn((self.height, self.width), |(i, j)| {
                    // 2×2 supersampling for soft edges.
                    let mut cover = 0.0;
                    for (dy, dx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                        let u = (j as f64 + dx - cx) / radius;
                        let v = (i as f64 + dy - cy) / radius;
                        let (u, v) = rotate(u, v, pose.tilt);
                        if inside(shape, u, v) {
                            cover += 0.25;
                        }
                    }
                    let gain = illumination_gain(illumination, i as f64 / h, j as f64 / w);
                    (0.06 + 0.84 * cover * gain).clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    /// Write every sequence as 8-bit PNG frames under `root/<class>/<Set k_idx>/`.
    pub fn write(&self, root: &Path) -> Result<usize> {
        let mut written = 0;
        for &class in &self.classes {
            if class >= 9 {
                return Err(Error::InvalidArgument(format!("class {class} out of range")));
            }
            for k in 0..self.sequences_per_class {
                let dir = root
                    .join(Self::class_dir(class))
                    .join(Self::sequence_dir(Self::illumination_of(k), k));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (t, frame) in self.render(class, k).iter().enumerate() {
                    write_png8(&dir.join(format!("frame_{:04}.png", t + 1)), frame)?;
                }
                written += 1;
            }
        }
        Ok(written)
    }
}

fn rotate(u: f64, v: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * u - s * v, s * u + c * v)
}

/// Distance from `(u, v)` to the segment from the origin along `angle`
/// (measured from straight up) with the given length.
fn near_ray(u: f64, v: f64, angle: f64, length: f64, half_width: f64) -> bool {
    let (dx, dy) = (angle.sin(), -angle.cos());
    let along = u * dx + v * dy;
    if !(0.0..=length).contains(&along) {
        return false;
    }
    let across = (u * dy - v * dx).abs();
    across <= half_width
}

fn inside(shape: u8, u: f64, v: f64) -> bool {
    match shape {
        // Flat palm: one tall slab with the fingers held together.
        0 => u.abs() <= 0.5 && (-1.3..=0.6).contains(&v),
        // Spread: round palm and five splayed fingers.
        1 => {
            u * u + v * v <= 0.5 * 0.5
                || [-1.2f64, -0.6, 0.0, 0.6, 1.2]
                    .iter()
                    .any(|&a| near_ray(u, v, a, 1.25, 0.09))
        }
        // V: round palm and two raised fingers.
        _ => {
            u * u + (v - 0.1) * (v - 0.1) <= 0.45 * 0.45
                || [-0.35f64, 0.35].iter().any(|&a| near_ray(u, v, a, 1.35, 0.12))
        }
    }
}

fn illumination_gain(kind: u8, y: f64, x: f64) -> f64 {
    match kind {
        0 => 1.0,
        1 => 0.55 + 0.45 * (1.0 - x),
        2 => 0.55 + 0.45 * x,
        3 => 0.6,
        _ => 0.55 + 0.45 * (1.0 - y),
    }
}
