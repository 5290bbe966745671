//! Inputs shared by the benchmarks.

use ndarray::{Array2, Array3};
use rand::Rng;
use rawlens_core::seed::labeled_rng;

pub fn random_frame(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut r = labeled_rng(seed, "bench-frame");
    Array2::from_shape_fn((h, w), |_| r.random_range(0.0..1.0))
}

pub fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut r = labeled_rng(seed, "bench-clip");
    Array3::from_shape_fn((t, h, w), |_| r.random_range(0.0..1.0))
}
