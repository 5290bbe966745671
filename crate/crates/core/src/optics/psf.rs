use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SensorGeometry;
use crate::error::{Error, Result};
use crate::imageio;
use crate::seed::rng;

/// A nonnegative convolution kernel normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSpreadFunction {
    grid: Array2<f64>,
    name: String,
}

impl PointSpreadFunction {
    /// Validate and normalize a kernel.
    pub fn new(grid: Array2<f64>, name: impl Into<String>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::NonPhysicalPsf("empty kernel".into()));
        }
        if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonPhysicalPsf(format!("non-finite entry {v}")));
        }
        if let Some(v) = grid.iter().find(|v| **v < 0.0) {
            return Err(Error::NonPhysicalPsf(format!("negative entry {v}")));
        }
        let total: f64 = grid.iter().sum();
        if total <= 0.0 {
            return Err(Error::NonPhysicalPsf(
                "all-zero kernel cannot be normalized".into(),
            ));
        }
        Ok(Self {
            grid: grid / total,
            name: name.into(),
        })
    }

    /// Unit impulse at the kernel center `((h-1)/2, (w-1)/2)`.
    pub fn delta(h: usize, w: usize) -> Self {
        let mut grid = Array2::zeros((h, w));
        grid[[(h - 1) / 2, (w - 1) / 2]] = 1.0;
        Self {
            grid,
            name: format!("delta-{h}x{w}"),
        }
    }

    /// Centered isotropic Gaussian.
    pub fn gaussian(h: usize, w: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("gaussian sigma {sigma}")));
        }
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let grid = Array2::from_shape_fn((h, w), |(i, j)| {
            let (dy, dx) = (i as f64 - cy, j as f64 - cx);
            (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
        });
        Self::new(grid, format!("gaussian-{h}x{w}-s{sigma}"))
    }

    /// Seeded pseudo-random caustic: a sparse field of bright points blurred
    /// by a small Gaussian, confined to a centered aperture.
    pub fn caustic(h: usize, w: usize, seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let mut points = Array2::<f64>::zeros((h, w));
        let n = ((h * w) / 60).max(3);
        let (ry, rx) = (h as f64 * 0.45, w as f64 * 0.45);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let mut placed = 0;
        while placed < n {
            let i = r.random_range(0..h);
            let j = r.random_range(0..w);
            let (dy, dx) = ((i as f64 - cy) / ry.max(0.5), (j as f64 - cx) / rx.max(0.5));
            if dy * dy + dx * dx > 1.0 {
                continue;
            }
            points[[i, j]] += 0.2 + r.random::<f64>();
            placed += 1;
        }
        let sigma = (h.min(w) as f64 / 80.0).max(0.6);
        let radius = (3.0 * sigma).ceil() as isize;
        let taps: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let blurred = separable_blur(&points, &taps, radius);
        Self::new(blurred, format!("caustic-{h}x{w}-seed{seed}"))
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    /// Position of the single nonzero entry, if the kernel is an impulse.
    pub fn delta_position(&self) -> Option<(usize, usize)> {
        let mut found = None;
        for ((i, j), &v) in self.grid.indexed_iter() {
            if v != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some((i, j));
            }
        }
        found.filter(|&(i, j)| self.grid[[i, j]] == 1.0)
    }
}

fn separable_blur(src: &Array2<f64>, taps: &[f64], radius: isize) -> Array2<f64> {
    let (h, w) = src.dim();
    let mut tmp = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let jj = j as isize + k as isize - radius;
                if (0..w as isize).contains(&jj) {
                    acc += t * src[[i, jj as usize]];
                }
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let ii = i as isize + k as isize - radius;
                if (0..h as isize).contains(&ii) {
                    acc += t * tmp[[ii as usize, j]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Optional JSON file next to a PSF image (`psf.tiff` → `psf.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfSidecar {
    pub name: Option<String>,
    pub geometry: Option<SensorGeometry>,
}

pub fn read_psf_sidecar(path: &Path) -> Result<Option<PsfSidecar>> {
    let sidecar = path.with_extension("json");
    if !sidecar.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// Load a single-channel PSF image, normalize it, and check it against `geometry`.
pub fn load_psf(path: &Path, geometry: &SensorGeometry) -> Result<PointSpreadFunction> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "PSF file not found"),
        ));
    }
    let grid = imageio::read_single_channel(path)?;
    let name = read_psf_sidecar(path)?
        .and_then(|s| s.name)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "psf".into());
    let psf = PointSpreadFunction::new(grid, name)?;
    geometry.validate(psf.dim())?;
    Ok(psf)
}
