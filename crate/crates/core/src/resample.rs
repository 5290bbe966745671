//! Bilinear resizing with half-pixel centers (align-corners off).
//!
//! Source coordinate for output index `d` is `(d + 0.5) · in/out − 0.5`,
//! clamped below at zero; the upper neighbor is clamped to the last pixel.

use ndarray::{Array2, ArrayView2};

fn taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(src: ArrayView2<'_, f64>, out: (usize, usize)) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == out {
        return src.to_owned();
    }
    let rows = taps(h, out.0);
    let cols = taps(w, out.1);
    Array2::from_shape_fn(out, |(i, j)| {
        let (r0, r1, fy) = rows[i];
        let (c0, c1, fx) = cols[j];
        let top = src[[r0, c0]] * (1.0 - fx) + src[[r0, c1]] * fx;
        let bottom = src[[r1, c0]] * (1.0 - fx) + src[[r1, c1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let img = Array2::from_elem((240, 320), 0.37);
        let out = resize_bilinear(img.view(), (75, 100));
        assert_eq!(out.dim(), (75, 100));
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn halving_averages_pixel_pairs() {
        // With half-pixel centers a 2× reduction samples exactly between pairs.
        let img = Array2::from_shape_fn((2, 4), |(_, j)| j as f64);
        let out = resize_bilinear(img.view(), (1, 2));
        assert_eq!(out[[0, 0]], 0.5);
        assert_eq!(out[[0, 1]], 2.5);
    }

    #[test]
    fn upsampling_clamps_edges() {
        let img = Array2::from_shape_fn((1, 2), |(_, j)| j as f64);
        let out = resize_bilinear(img.view(), (1, 4));
        assert_eq!(out.row(0).to_vec(), vec![0.0, 0.25, 0.75, 1.0]);
    }
}
