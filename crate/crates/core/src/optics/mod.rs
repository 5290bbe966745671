//! Mask-based lensless camera simulation.
//!
//! The measurement of a scene `x` is `b = C H P x`: `P` zero-pads the scene
//! into the top-left corner of a padded plane, `H` convolves with the PSF
//! (circularly on that plane, which equals linear convolution because the
//! plane is at least `scene + psf - 1` in each axis), and `C` crops a
//! sensor-sized window centered on the plane.

mod fft;
mod psf;

use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clip::{ClipKind, VideoClip};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

pub use fft::Fft2;
pub use psf::{load_psf, read_psf_sidecar, PointSpreadFunction, PsfSidecar};

/// Scene, sensor, and padded-plane sizes in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorGeometry {
    pub scene_h: usize,
    pub scene_w: usize,
    pub sensor_h: usize,
    pub sensor_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl SensorGeometry {
    /// Sensor equal to the scene, plane of minimal linear-convolution size.
    pub fn matched(scene: (usize, usize), psf: (usize, usize)) -> Self {
        Self {
            scene_h: scene.0,
            scene_w: scene.1,
            sensor_h: scene.0,
            sensor_w: scene.1,
            pad_h: scene.0 + psf.0 - 1,
            pad_w: scene.1 + psf.1 - 1,
        }
    }

    pub fn scene_dim(&self) -> (usize, usize) {
        (self.scene_h, self.scene_w)
    }

    pub fn sensor_dim(&self) -> (usize, usize) {
        (self.sensor_h, self.sensor_w)
    }

    pub fn plane_dim(&self) -> (usize, usize) {
        (self.pad_h, self.pad_w)
    }

    /// Top-left corner of the centered crop window on the padded plane.
    pub fn crop_offset(&self) -> (usize, usize) {
        (
            (self.pad_h - self.sensor_h) / 2,
            (self.pad_w - self.sensor_w) / 2,
        )
    }

    /// Check the geometry against a PSF of size `psf`.
    pub fn validate(&self, psf: (usize, usize)) -> Result<()> {
        let dims = [
            self.scene_h,
            self.scene_w,
            self.sensor_h,
            self.sensor_w,
            self.pad_h,
            self.pad_w,
        ];
        if dims.contains(&0) || psf.0 == 0 || psf.1 == 0 {
            return Err(Error::Geometry(format!("zero-sized axis in {self:?}")));
        }
        if psf.0 > self.sensor_h || psf.1 > self.sensor_w {
            return Err(Error::Geometry(format!(
                "PSF {}×{} larger than sensor {}×{}",
                psf.0, psf.1, self.sensor_h, self.sensor_w
            )));
        }
        if self.pad_h < self.scene_h + psf.0 - 1 || self.pad_w < self.scene_w + psf.1 - 1 {
            return Err(Error::Geometry(format!(
                "padded plane {}×{} smaller than linear convolution support {}×{}",
                self.pad_h,
                self.pad_w,
                self.scene_h + psf.0 - 1,
                self.scene_w + psf.1 - 1
            )));
        }
        if self.pad_h < self.sensor_h || self.pad_w < self.sensor_w {
            return Err(Error::Geometry(format!(
                "padded plane {}×{} cannot contain sensor {}×{}",
                self.pad_h, self.pad_w, self.sensor_h, self.sensor_w
            )));
        }
        Ok(())
    }
}

/// A scene frame with luminance in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pixels: Array2<f64>,
}

impl SceneFrame {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if let Some(v) = pixels.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "scene value {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorMeasurement {
    pub pixels: Array2<f64>,
    pub noise_applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    None,
    AdditiveGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    /// Standard deviation in normalized intensity units.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        if sigma == 0.0 {
            return Self::none();
        }
        Self {
            model: NoiseModel::AdditiveGaussian,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.model {
            NoiseModel::None => self.sigma == 0.0,
            NoiseModel::AdditiveGaussian => self.sigma.is_finite() && self.sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "noise model {:?} with sigma {}",
                self.model, self.sigma
            )))
        }
    }

    /// The spec for frame `index` of a clip.
    pub fn for_frame(&self, index: usize) -> Self {
        Self {
            seed: derive_seed(self.seed, &format!("frame/{index}")),
            ..*self
        }
    }
}

/// The linear operator `A = C H P` for one PSF and geometry, with its adjoint.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    geometry: SensorGeometry,
    psf: PointSpreadFunction,
    fft: Fft2,
    spectrum: Vec<Complex64>,
    delta: Option<(usize, usize)>,
}

impl ForwardModel {
    pub fn new(psf: PointSpreadFunction, geometry: SensorGeometry) -> Result<Self> {
        geometry.validate(psf.dim())?;
        let (ph, pw) = geometry.plane_dim();
        let fft = Fft2::new(ph, pw);
        let mut kernel = Array2::zeros((ph, pw));
        let (kh, kw) = psf.dim();
        kernel.slice_mut(s![..kh, ..kw]).assign(psf.grid());
        let spectrum = fft.forward_real(&kernel);
        let delta = psf.delta_position();
        Ok(Self {
            geometry,
            psf,
            fft,
            spectrum,
            delta,
        })
    }

    /// Model with a sensor equal to the scene and a minimal plane.
    pub fn matched(psf: PointSpreadFunction, scene: (usize, usize)) -> Result<Self> {
        let geometry = SensorGeometry::matched(scene, psf.dim());
        Self::new(psf, geometry)
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn psf(&self) -> &PointSpreadFunction {
        &self.psf
    }

    pub fn plane_fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Transfer function of `H` on the padded plane.
    pub fn psf_spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    fn check(&self, what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
        if got != want {
            return Err(Error::Geometry(format!(
                "{what} is {}×{}, geometry expects {}×{}",
                got.0, got.1, want.0, want.1
            )));
        }
        Ok(())
    }

    /// `P`: zero-pad a scene into the top-left of the plane.
    pub fn pad_scene(&self, scene: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut plane = Array2::zeros(self.geometry.plane_dim());
        let (h, w) = scene.dim();
        plane.slice_mut(s![..h, ..w]).assign(&scene);
        plane
    }

    /// `Pᵀ`: restrict a plane to the scene support.
    pub fn restrict_scene(&self, plane: ArrayView2<'_, f64>) -> Array2<f64> {
        plane
            .slice(s![..self.geometry.scene_h, ..self.geometry.scene_w])
            .to_owned()
    }

    /// `C`: crop the sensor window out of the plane.
    pub fn crop(&self, plane: ArrayView2<'_, f64>) -> Array2<f64> {
        let (r, c) = self.geometry.crop_offset();
        plane
            .slice(s![r..r + self.geometry.sensor_h, c..c + self.geometry.sensor_w])
            .to_owned()
    }

    /// `Cᵀ`: zero-pad a sensor image into its window on the plane.
    pub fn pad_sensor(&self, sensor: ArrayView2<'_, f64>) -> Array2<f64> {
        let (r, c) = self.geometry.crop_offset();
        let mut plane = Array2::zeros(self.geometry.plane_dim());
        plane
            .slice_mut(s![r..r + self.geometry.sensor_h, c..c + self.geometry.sensor_w])
            .assign(&sensor);
        plane
    }

    /// `H`: circular convolution with the PSF on the plane.
    pub fn convolve_plane(&self, plane: ArrayView2<'_, f64>) -> Array2<f64> {
        if let Some(shift) = self.delta {
            return circular_shift(plane, shift, false);
        }
        let mut spec: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut spec);
        for (v, h) in spec.iter_mut().zip(&self.spectrum) {
            *v *= h;
        }
        self.fft.inverse_real(spec)
    }

    /// `Hᵀ`: circular correlation with the PSF on the plane.
    pub fn correlate_plane(&self, plane: ArrayView2<'_, f64>) -> Array2<f64> {
        if let Some(shift) = self.delta {
            return circular_shift(plane, shift, true);
        }
        let mut spec: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut spec);
        for (v, h) in spec.iter_mut().zip(&self.spectrum) {
            *v *= h.conj();
        }
        self.fft.inverse_real(spec)
    }

    /// Noiseless `A x` for a scene-shaped array.
    pub fn apply(&self, scene: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check("scene", scene.dim(), self.geometry.scene_dim())?;
        let plane = self.pad_scene(scene);
        Ok(self.crop(self.convolve_plane(plane.view()).view()))
    }

    /// `Aᵀ y` for a sensor-shaped array.
    pub fn adjoint(&self, sensor: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check("measurement", sensor.dim(), self.geometry.sensor_dim())?;
        let plane = self.pad_sensor(sensor);
        Ok(self.restrict_scene(self.correlate_plane(plane.view()).view()))
    }

    /// Simulate one exposure: `A x`, optional additive noise, clamp at zero.
    pub fn measure(&self, scene: &SceneFrame, noise: &NoiseSpec) -> Result<SensorMeasurement> {
        noise.validate()?;
        let mut pixels = self.apply(scene.pixels().view())?;
        let noise_applied = noise.model == NoiseModel::AdditiveGaussian;
        if noise_applied {
            let normal = Normal::new(0.0, noise.sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut r = rng(noise.seed);
            pixels.mapv_inplace(|v| v + normal.sample(&mut r));
        }
        // FFT round-off leaves tiny negatives on dark regions.
        pixels.mapv_inplace(|v| v.max(0.0));
        Ok(SensorMeasurement {
            pixels,
            noise_applied,
        })
    }

    /// `adjoint_apply`: checks the measurement against the geometry first.
    pub fn adjoint_apply(&self, measurement: &SensorMeasurement) -> Result<Array2<f64>> {
        self.adjoint(measurement.pixels.view())
    }

    /// Frame-wise measurement of a scene clip into a raw clip.
    pub fn simulate_video(&self, clip: &VideoClip, noise: &NoiseSpec) -> Result<VideoClip> {
        clip.map_frames(ClipKind::Raw, |i, frame| {
            let scene = SceneFrame::new(frame.to_owned())?;
            Ok(self.measure(&scene, &noise.for_frame(i))?.pixels)
        })
    }
}

/// One-shot forward measurement.
pub fn forward_measure(
    scene: &SceneFrame,
    psf: &PointSpreadFunction,
    geometry: &SensorGeometry,
    noise: &NoiseSpec,
) -> Result<SensorMeasurement> {
    ForwardModel::new(psf.clone(), *geometry)?.measure(scene, noise)
}

pub fn simulate_video(
    clip: &VideoClip,
    psf: &PointSpreadFunction,
    geometry: &SensorGeometry,
    noise: &NoiseSpec,
) -> Result<VideoClip> {
    ForwardModel::new(psf.clone(), *geometry)?.simulate_video(clip, noise)
}

/// Circular shift by `(dr, dc)`; `reverse` shifts the other way.
fn circular_shift(
    plane: ArrayView2<'_, f64>,
    (dr, dc): (usize, usize),
    reverse: bool,
) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (dr, dc) = if reverse {
        ((h - dr % h) % h, (w - dc % w) % w)
    } else {
        (dr % h, dc % w)
    };
    let mut out = Array2::zeros((h, w));
    for ((i, j), &v) in plane.indexed_iter() {
        out[[(i + dr) % h, (j + dc) % w]] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Direct spatial convolution followed by a centered crop.
    fn brute_force(scene: &Array2<f64>, psf: &Array2<f64>, g: &SensorGeometry) -> Array2<f64> {
        let (sh, sw) = scene.dim();
        let (kh, kw) = psf.dim();
        let mut full = Array2::zeros((g.pad_h, g.pad_w));
        for i in 0..sh {
            for j in 0..sw {
                for a in 0..kh {
                    for b in 0..kw {
                        full[[i + a, j + b]] += psf[[a, b]] * scene[[i, j]];
                    }
                }
            }
        }
        let (r, c) = g.crop_offset();
        full.slice(s![r..r + g.sensor_h, c..c + g.sensor_w]).to_owned()
    }

    fn random_array(r: &mut impl Rng, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| r.random::<f64>())
    }

    #[test]
    fn delta_psf_is_identity() {
        let mut r = rng(3);
        let scene = SceneFrame::new(random_array(&mut r, 9, 11)).unwrap();
        let model = ForwardModel::matched(PointSpreadFunction::delta(3, 5), (9, 11)).unwrap();
        let b = model.measure(&scene, &NoiseSpec::none()).unwrap();
        assert_eq!(&b.pixels, scene.pixels());
        assert!(!b.noise_applied);
    }

    #[test]
    fn zero_scene_gives_zero_measurement() {
        let psf = PointSpreadFunction::caustic(6, 6, 1).unwrap();
        let model = ForwardModel::matched(psf, (8, 8)).unwrap();
        let b = model
            .measure(&SceneFrame::new(Array2::zeros((8, 8))).unwrap(), &NoiseSpec::none())
            .unwrap();
        assert!(b.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_brute_force_on_8x8_with_3x3() {
        let mut r = rng(11);
        let scene = random_array(&mut r, 8, 8);
        let psf = PointSpreadFunction::new(random_array(&mut r, 3, 3), "rand").unwrap();
        let g = SensorGeometry::matched((8, 8), (3, 3));
        let model = ForwardModel::new(psf.clone(), g).unwrap();
        let fast = model.apply(scene.view()).unwrap();
        let slow = brute_force(&scene, psf.grid(), &g);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oversized_plane_and_small_sensor() {
        let mut r = rng(5);
        let scene = random_array(&mut r, 10, 7);
        let psf = PointSpreadFunction::new(random_array(&mut r, 4, 3), "rand").unwrap();
        let g = SensorGeometry {
            scene_h: 10,
            scene_w: 7,
            sensor_h: 6,
            sensor_w: 5,
            pad_h: 16,
            pad_w: 12,
        };
        let model = ForwardModel::new(psf.clone(), g).unwrap();
        let fast = model.apply(scene.view()).unwrap();
        let slow = brute_force(&scene, psf.grid(), &g);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_of_zero_and_delta() {
        let model = ForwardModel::matched(PointSpreadFunction::delta(5, 5), (6, 6)).unwrap();
        let zero = model.adjoint(Array2::zeros((6, 6)).view()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut r = rng(2);
        let y = random_array(&mut r, 6, 6);
        assert_eq!(model.adjoint(y.view()).unwrap(), y);
    }

    #[test]
    fn geometry_mismatch_is_reported() {
        let model = ForwardModel::matched(PointSpreadFunction::delta(3, 3), (6, 6)).unwrap();
        let scene = SceneFrame::new(Array2::zeros((5, 6))).unwrap();
        assert!(matches!(
            model.measure(&scene, &NoiseSpec::none()),
            Err(Error::Geometry(_))
        ));
        assert!(model.adjoint(Array2::zeros((6, 7)).view()).is_err());
    }

    #[test]
    fn psf_larger_than_sensor_rejected() {
        let g = SensorGeometry {
            scene_h: 4,
            scene_w: 4,
            sensor_h: 2,
            sensor_w: 2,
            pad_h: 10,
            pad_w: 10,
        };
        assert!(ForwardModel::new(PointSpreadFunction::delta(3, 3), g).is_err());
    }

    #[test]
    fn gaussian_noise_is_seeded_and_nonnegative() {
        let model = ForwardModel::matched(PointSpreadFunction::delta(1, 1), (16, 16)).unwrap();
        let scene = SceneFrame::new(Array2::from_elem((16, 16), 0.01)).unwrap();
        let noise = NoiseSpec::gaussian(0.05, 9);
        let a = model.measure(&scene, &noise).unwrap();
        let b = model.measure(&scene, &noise).unwrap();
        assert_eq!(a, b);
        assert!(a.noise_applied);
        assert!(a.pixels.iter().all(|&v| v >= 0.0));
        assert!(a.pixels.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn noise_spec_invariant() {
        assert!(NoiseSpec {
            model: NoiseModel::None,
            sigma: 0.1,
            seed: 0
        }
        .validate()
        .is_err());
        assert!(NoiseSpec {
            model: NoiseModel::AdditiveGaussian,
            sigma: 0.0,
            seed: 0
        }
        .validate()
        .is_err());
        assert_eq!(NoiseSpec::gaussian(0.0, 4), NoiseSpec::none());
    }

    #[test]
    fn simulate_video_matches_per_frame_calls() {
        let mut r = rng(8);
        let frames: Vec<_> = (0..8).map(|_| random_array(&mut r, 12, 12)).collect();
        let clip = VideoClip::from_frames(&frames, ClipKind::Scene, Some(4)).unwrap();
        let psf = PointSpreadFunction::caustic(5, 5, 3).unwrap();
        let model = ForwardModel::matched(psf, (12, 12)).unwrap();
        let noise = NoiseSpec::gaussian(0.01, 77);
        let raw = model.simulate_video(&clip, &noise).unwrap();
        assert_eq!(raw.len(), 8);
        assert_eq!(raw.kind(), ClipKind::Raw);
        assert_eq!(raw.label(), Some(4));
        for (i, f) in frames.iter().enumerate() {
            let single = model
                .measure(&SceneFrame::new(f.clone()).unwrap(), &noise.for_frame(i))
                .unwrap();
            assert_eq!(raw.frame(i), single.pixels);
        }
    }

    #[test]
    fn zero_clip_simulates_to_zero() {
        let clip = VideoClip::new(ndarray::Array3::zeros((8, 10, 10)), ClipKind::Scene, None).unwrap();
        let psf = PointSpreadFunction::caustic(4, 4, 0).unwrap();
        let raw = simulate_video(
            &clip,
            &psf,
            &SensorGeometry::matched((10, 10), (4, 4)),
            &NoiseSpec::none(),
        )
        .unwrap();
        assert!(raw.frames().iter().all(|&v| v == 0.0));
    }
}
