//! ADMM reconstruction of scene frames from raw sensor measurements.
//!
//! Solves `min_x ½‖C H x − b‖² + λ·TV(x) + 𝟙[x ≥ 0]` on the padded plane with
//! the splits `ν = Hx`, `u = Ψx` and `w = x`. `Ψ` is the pair of circular
//! forward differences, so `HᵀH` and `ΨᵀΨ` are both diagonal under the plane
//! FFT and the x-update is a pointwise division. The `w` projection also
//! zeroes everything outside the scene support, which keeps the solver's
//! model identical to the simulator's.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clip::{ClipKind, VideoClip};
use crate::error::{Error, Result};
use crate::optics::{ForwardModel, SceneFrame, SensorMeasurement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmParams {
    pub rho_data: f64,
    pub rho_tv: f64,
    pub rho_nonneg: f64,
    pub tv_weight: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    /// Residual balancing of the penalties (off by default).
    pub adaptive: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho_data: 1.0,
            rho_tv: 1.0,
            rho_nonneg: 1.0,
            tv_weight: 1e-3,
            max_iters: 200,
            primal_tol: 1e-3,
            dual_tol: 1e-3,
            adaptive: false,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rho_data", self.rho_data),
            ("rho_tv", self.rho_tv),
            ("rho_nonneg", self.rho_nonneg),
            ("primal_tol", self.primal_tol),
            ("dual_tol", self.dual_tol),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("tv_weight must be ≥ 0, got {}", self.tv_weight)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Residual norms after one iteration (relative, Boyd-style).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub objective: f64,
}

/// Iterates and duals on the padded plane.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Array2<f64>,
    pub nu: Array2<f64>,
    pub u: [Array2<f64>; 2],
    pub w: Array2<f64>,
    pub xi: Array2<f64>,
    pub eta: [Array2<f64>; 2],
    pub rho: Array2<f64>,
    pub iteration: usize,
    pub history: Vec<ResidualRecord>,
}

impl AdmmState {
    fn zeros(dim: (usize, usize)) -> Self {
        let z = Array2::zeros(dim);
        Self {
            x: z.clone(),
            nu: z.clone(),
            u: [z.clone(), z.clone()],
            w: z.clone(),
            xi: z.clone(),
            eta: [z.clone(), z.clone()],
            rho: z,
            iteration: 0,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    /// Scene-sized estimate clamped to `[0, 1]`.
    pub frame: SceneFrame,
    /// Scene-sized non-negative iterate before the upper clamp.
    pub unclamped: Array2<f64>,
    pub history: Vec<ResidualRecord>,
    pub converged: bool,
}

/// Circular forward differences along columns (`0`) and rows (`1`).
pub fn grad(x: ArrayView2<'_, f64>) -> [Array2<f64>; 2] {
    let (h, w) = x.dim();
    let dx = Array2::from_shape_fn((h, w), |(i, j)| x[[i, (j + 1) % w]] - x[[i, j]]);
    let dy = Array2::from_shape_fn((h, w), |(i, j)| x[[(i + 1) % h, j]] - x[[i, j]]);
    [dx, dy]
}

/// Adjoint of [`grad`].
pub fn grad_adjoint(d: &[Array2<f64>; 2]) -> Array2<f64> {
    let (h, w) = d[0].dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        d[0][[i, (j + w - 1) % w]] - d[0][[i, j]] + d[1][[(i + h - 1) % h, j]] - d[1][[i, j]]
    })
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn norm2(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Anisotropic TV on the padded plane (circular boundary).
fn tv_plane(x: ArrayView2<'_, f64>) -> f64 {
    grad(x).iter().map(|d| d.iter().map(|v| v.abs()).sum::<f64>()).sum()
}

/// Pointwise solver for `(μ₁HᵀH + μ₂ΨᵀΨ + μ₃I) x = r`.
pub struct XSolver<'a> {
    model: &'a ForwardModel,
    denom: Vec<f64>,
}

impl<'a> XSolver<'a> {
    pub fn new(model: &'a ForwardModel, mu: [f64; 3]) -> Self {
        let (h, w) = model.geometry().plane_dim();
        let spec = model.psf_spectrum();
        let denom = (0..h * w)
            .map(|k| {
                let (i, j) = (k / w, k % w);
                let lap = 4.0 - 2.0 * (2.0 * PI * i as f64 / h as f64).cos() - 2.0 * (2.0 * PI * j as f64 / w as f64).cos();
                mu[0] * spec[k].norm_sqr() + mu[1] * lap + mu[2]
            })
            .collect();
        Self { model, denom }
    }

    pub fn solve(&self, rhs: &Array2<f64>) -> Array2<f64> {
        let fft = self.model.plane_fft();
        let mut s = fft.forward_real(rhs);
        s.iter_mut().zip(&self.denom).for_each(|(v, d)| *v /= Complex64::new(*d, 0.0));
        fft.inverse_real(s)
    }
}

fn check_psf(model: &ForwardModel) -> Result<()> {
    let total: f64 = model.psf().grid().iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::NonPhysicalPsf(format!("kernel sums to {total}, expected 1")));
    }
    Ok(())
}

/// `½‖CHx − b‖² + λ·TV(x)`, or `+∞` if `x` has an entry below `−1e-9`.
pub fn objective_value(
    x: ArrayView2<'_, f64>,
    measurement: &SensorMeasurement,
    model: &ForwardModel,
    params: &AdmmParams,
) -> Result<f64> {
    if x.iter().any(|&v| v < -1e-9) {
        return Ok(f64::INFINITY);
    }
    let ax = model.apply(x)?;
    if ax.dim() != measurement.pixels.dim() {
        return Err(Error::Geometry("measurement does not match sensor geometry".into()));
    }
    let data = 0.5 * (&ax - &measurement.pixels).iter().map(|v| v * v).sum::<f64>();
    let plane = model.pad_scene(x);
    Ok(data + params.tv_weight * tv_plane(plane.view()))
}

/// Reconstruct one frame, starting from the back-projection `HᵀCᵀb`.
pub fn admm_reconstruct(
    measurement: &SensorMeasurement,
    model: &ForwardModel,
    params: &AdmmParams,
) -> Result<AdmmResult> {
    params.validate()?;
    check_psf(model)?;
    let g = *model.geometry();
    if measurement.pixels.dim() != g.sensor_dim() {
        return Err(Error::Geometry(format!(
            "measurement {:?} does not match sensor {:?}",
            measurement.pixels.dim(),
            g.sensor_dim()
        )));
    }
    let plane = g.plane_dim();
    let (sh, sw) = g.scene_dim();
    let ctb = model.pad_sensor(measurement.pixels.view());
    let mask = model.pad_sensor(Array2::ones(g.sensor_dim()).view());
    let mut mu = [params.rho_data, params.rho_tv, params.rho_nonneg];
    let mut solver = XSolver::new(model, mu);
    let mut st = AdmmState::zeros(plane);
    // Warm start from the non-negative back-projection on the scene support.
    let back = model.correlate_plane(ctb.view());
    Zip::indexed(&mut st.x)
        .and(&back)
        .for_each(|(i, j), x, &b| *x = if i < sh && j < sw { b.max(0.0) } else { 0.0 });
    st.w.assign(&st.x);
    let mut hx = model.convolve_plane(st.x.view());
    let mut psi_x = grad(st.x.view());
    st.nu.assign(&hx);
    st.u = psi_x.clone();
    let mut initial: Option<f64> = None;
    let mut converged = false;

    for it in 0..params.max_iters {
        let (nu_prev, u_prev, w_prev) = (st.nu.clone(), st.u.clone(), st.w.clone());

        // u: soft-thresholding of Ψx + η/μ₂.
        let tau = params.tv_weight / mu[1];
        for k in 0..2 {
            Zip::from(&mut st.u[k])
                .and(&psi_x[k])
                .and(&st.eta[k])
                .for_each(|u, &p, &e| *u = soft(p + e / mu[1], tau));
        }
        // ν: (CᵀC + μ₁I)⁻¹ (ξ + μ₁Hx + Cᵀb), diagonal.
        Zip::from(&mut st.nu)
            .and(&st.xi)
            .and(&hx)
            .and(&ctb)
            .and(&mask)
            .for_each(|n, &xi, &h, &b, &m| *n = (xi + mu[0] * h + b) / (m + mu[0]));
        // w: projection onto {x ≥ 0, zero outside the scene}.
        Zip::indexed(&mut st.w)
            .and(&st.x)
            .and(&st.rho)
            .for_each(|(i, j), w, &x, &r| *w = if i < sh && j < sw { (x + r / mu[2]).max(0.0) } else { 0.0 });
        // x: closed-form frequency-domain solve.
        let nu_term = &st.nu * mu[0] - &st.xi;
        let u_term = [&st.u[0] * mu[1] - &st.eta[0], &st.u[1] * mu[1] - &st.eta[1]];
        let rhs = model.correlate_plane(nu_term.view()) + grad_adjoint(&u_term) + (&st.w * mu[2] - &st.rho);
        st.x = solver.solve(&rhs);
        hx = model.convolve_plane(st.x.view());
        psi_x = grad(st.x.view());

        // Dual ascent.
        let r_nu = &hx - &st.nu;
        let r_u = [&psi_x[0] - &st.u[0], &psi_x[1] - &st.u[1]];
        let r_w = &st.x - &st.w;
        st.xi.scaled_add(mu[0], &r_nu);
        st.eta[0].scaled_add(mu[1], &r_u[0]);
        st.eta[1].scaled_add(mu[1], &r_u[1]);
        st.rho.scaled_add(mu[2], &r_w);

        // Boyd-style relative residuals.
        let primal_abs = (norm2(&r_nu) + norm2(&r_u[0]) + norm2(&r_u[1]) + norm2(&r_w)).sqrt();
        let ax = (norm2(&hx) + norm2(&psi_x[0]) + norm2(&psi_x[1]) + norm2(&st.x)).sqrt();
        let z = (norm2(&st.nu) + norm2(&st.u[0]) + norm2(&st.u[1]) + norm2(&st.w)).sqrt();
        let d_nu = &st.nu - &nu_prev;
        let d_u = [&st.u[0] - &u_prev[0], &st.u[1] - &u_prev[1]];
        let d_w = &st.w - &w_prev;
        let s = model.correlate_plane((&d_nu * mu[0]).view())
            + grad_adjoint(&[&d_u[0] * mu[1], &d_u[1] * mu[1]])
            + &d_w * mu[2];
        let dual_abs = norm2(&s).sqrt();
        // Noiseless data drives the multipliers to zero, so the dual residual
        // is also measured against the penalty-weighted splits.
        let aty = model.correlate_plane(st.xi.view()) + grad_adjoint(&st.eta) + &st.rho;
        let atz = model.correlate_plane((&st.nu * mu[0]).view())
            + grad_adjoint(&[&st.u[0] * mu[1], &st.u[1] * mu[1]])
            + &st.w * mu[2];
        let primal = primal_abs / ax.max(z).max(f64::MIN_POSITIVE);
        let dual = dual_abs / norm2(&aty).sqrt().max(norm2(&atz).sqrt()).max(f64::MIN_POSITIVE);

        let objective = {
            let est = st.w.slice(ndarray::s![..sh, ..sw]);
            objective_value(est, measurement, model, params)?
        };
        st.iteration = it + 1;
        st.history.push(ResidualRecord { iter: it + 1, primal, dual, objective });

        if !primal_abs.is_finite() || !dual_abs.is_finite() {
            return Err(Error::Diverged { iteration: it + 1, residual: primal_abs, limit: f64::NAN });
        }
        let size = primal_abs.max(dual_abs);
        if initial.is_none() && size > 0.0 {
            initial = Some(size);
        }
        if let Some(base) = initial.filter(|&b| size > 1e6 * b) {
            return Err(Error::Diverged { iteration: it + 1, residual: size, limit: 1e6 * base });
        }
        // A zero measurement is solved exactly by the zero iterate.
        if primal_abs == 0.0 && dual_abs == 0.0 {
            converged = true;
            break;
        }
        if it > 0 && primal < params.primal_tol && dual < params.dual_tol {
            converged = true;
            break;
        }
        if params.adaptive {
            let scale = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                mu.iter_mut().for_each(|m| *m *= scale);
                solver = XSolver::new(model, mu);
            }
        }
    }

    let unclamped = st.w.slice(ndarray::s![..sh, ..sw]).to_owned();
    let frame = SceneFrame::new(unclamped.mapv(|v| v.clamp(0.0, 1.0)))?;
    Ok(AdmmResult { frame, unclamped, history: st.history, converged })
}

/// Frame-wise reconstruction of a raw clip; returns the clip and per-frame histories.
pub fn reconstruct_clip(
    raw: &VideoClip,
    model: &ForwardModel,
    params: &AdmmParams,
) -> Result<(VideoClip, Vec<Vec<ResidualRecord>>)> {
    let mut histories = Vec::with_capacity(raw.len());
    let out = raw.map_frames(ClipKind::Reconstructed, |_, frame| {
        let m = SensorMeasurement { pixels: frame.to_owned(), noise_applied: false };
        let r = admm_reconstruct(&m, model, params)?;
        histories.push(r.history);
        Ok(r.frame.into_pixels())
    })?;
    Ok((out, histories))
}

/// `iter,primal,dual,objective` rows.
pub fn write_residual_csv(path: &Path, history: &[ResidualRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let mse = Zip::from(&a).and(&b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y)) / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{NoiseSpec, PointSpreadFunction, SensorGeometry};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn blob(n: usize) -> Array2<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        Array2::from_shape_fn((n, n), |(i, j)| {
            let r2 = ((i as f64 - c).powi(2) + (j as f64 - c * 0.8).powi(2)) / (n as f64 * 0.15).powi(2);
            0.05 + 0.85 * (-r2).exp()
        })
    }

    fn measure(model: &ForwardModel, scene: &Array2<f64>) -> SensorMeasurement {
        model.measure(&SceneFrame::new(scene.clone()).unwrap(), &NoiseSpec::none()).unwrap()
    }

    #[test]
    fn delta_psf_recovers_measurement() {
        let mut r = crate::seed::rng(1);
        let scene = Array2::from_shape_fn((12, 10), |_| r.random_range(0.0..1.0));
        let model = ForwardModel::matched(PointSpreadFunction::delta(3, 3), (12, 10)).unwrap();
        let m = measure(&model, &scene);
        let p = AdmmParams { tv_weight: 0.0, max_iters: 50, primal_tol: 1e-9, dual_tol: 1e-9, ..Default::default() };
        let out = admm_reconstruct(&m, &model, &p).unwrap();
        assert!(out.history.len() <= 50);
        for (a, b) in out.frame.pixels().iter().zip(m.pixels.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let model = ForwardModel::matched(PointSpreadFunction::gaussian(5, 5, 1.0).unwrap(), (16, 16)).unwrap();
        let m = SensorMeasurement { pixels: Array2::zeros((16, 16)), noise_applied: false };
        let out = admm_reconstruct(&m, &model, &AdmmParams::default()).unwrap();
        assert!(out.frame.pixels().iter().all(|&v| v == 0.0));
        assert!(out.converged);
    }

    #[test]
    fn gaussian_blur_benchmark() {
        let scene = blob(64);
        let model = ForwardModel::matched(PointSpreadFunction::gaussian(9, 9, 2.0).unwrap(), (64, 64)).unwrap();
        let m = measure(&model, &scene);
        let out = admm_reconstruct(&m, &model, &AdmmParams::default()).unwrap();
        let p = psnr(out.frame.pixels().view(), scene.view());
        let last = out.history.last().unwrap();
        assert!(p >= 30.0, "psnr {p}");
        assert!(out.converged, "primal {} dual {} after {}", last.primal, last.dual, last.iter);
        assert!(last.primal < 1e-3 && last.dual < 1e-3);
        assert!(out.unclamped.iter().all(|&v| v >= -1e-9));
    }

    #[test]
    fn x_update_matches_dense_solve() {
        let psf = PointSpreadFunction::gaussian(3, 3, 0.8).unwrap();
        let model = ForwardModel::new(psf, SensorGeometry { scene_h: 6, scene_w: 5, sensor_h: 6, sensor_w: 5, pad_h: 9, pad_w: 8 }).unwrap();
        let (h, w) = model.geometry().plane_dim();
        let n = h * w;
        let mu = [1.3, 0.7, 0.4];
        let apply = |x: &Array2<f64>| -> Array2<f64> {
            let hth = model.correlate_plane(model.convolve_plane(x.view()).view());
            hth * mu[0] + grad_adjoint(&grad(x.view())) * mu[1] + x * mu[2]
        };
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mut e = Array2::zeros((h, w));
            e[[k / w, k % w]] = 1.0;
            for (i, v) in apply(&e).iter().enumerate() {
                dense[(i, k)] = *v;
            }
        }
        let mut r = crate::seed::rng(3);
        let rhs = Array2::from_shape_fn((h, w), |_| r.random_range(-1.0..1.0));
        let expect = dense.lu().solve(&DVector::from_iterator(n, rhs.iter().copied())).unwrap();
        let got = XSolver::new(&model, mu).solve(&rhs);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_adjoint_identity() {
        let mut r = crate::seed::rng(4);
        let x = Array2::from_shape_fn((7, 9), |_| r.random_range(-1.0..1.0));
        let d = [Array2::from_shape_fn((7, 9), |_| r.random_range(-1.0..1.0)), Array2::from_shape_fn((7, 9), |_| r.random_range(-1.0..1.0))];
        let g = grad(x.view());
        let lhs: f64 = (&g[0] * &d[0]).sum() + (&g[1] * &d[1]).sum();
        let rhs: f64 = (&x * &grad_adjoint(&d)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_formula() {
        for (v, t) in [(0.7, 0.2), (-0.7, 0.2), (0.1, 0.2), (-0.05, 0.0)] {
            assert_eq!(soft(v, t), v.signum() * (v.abs() - t).max(0.0));
        }
        assert_eq!(soft(0.3, 0.1), 0.3 - 0.1);
        assert_eq!(soft(-0.1, 0.3), 0.0);
    }

    #[test]
    fn objective_cases() {
        let model = ForwardModel::matched(PointSpreadFunction::delta(1, 1), (2, 2)).unwrap();
        let x = Array2::from_elem((2, 2), 0.5);
        let b = SensorMeasurement { pixels: Array2::from_elem((2, 2), 0.3), noise_applied: false };
        let p = AdmmParams { tv_weight: 0.5, ..Default::default() };
        // ½·4·0.2² and zero TV for a constant.
        assert!((objective_value(x.view(), &b, &model, &p).unwrap() - 0.08).abs() < 1e-12);
        let mut neg = x.clone();
        neg[[0, 1]] = -1e-6;
        assert_eq!(objective_value(neg.view(), &b, &model, &p).unwrap(), f64::INFINITY);

        let scene = blob(16);
        let model = ForwardModel::matched(PointSpreadFunction::gaussian(5, 5, 1.0).unwrap(), (16, 16)).unwrap();
        let m = measure(&model, &scene);
        let p = AdmmParams { tv_weight: 0.0, ..Default::default() };
        assert!(objective_value(scene.view(), &m, &model, &p).unwrap() < 1e-9);
    }

    #[test]
    fn clip_is_framewise() {
        let model = ForwardModel::matched(PointSpreadFunction::gaussian(5, 5, 1.0).unwrap(), (16, 16)).unwrap();
        let frames = ndarray::Array3::from_shape_fn((8, 16, 16), |(t, i, j)| ((t + i * 3 + j) % 11) as f64 / 11.0);
        let scene = VideoClip::new(frames, ClipKind::Scene, None).unwrap();
        let raw = model.simulate_video(&scene, &NoiseSpec::none()).unwrap();
        let p = AdmmParams { max_iters: 20, ..Default::default() };
        let (rec, hist) = reconstruct_clip(&raw, &model, &p).unwrap();
        assert_eq!(rec.kind(), ClipKind::Reconstructed);
        assert_eq!(rec.frames().dim(), (8, 16, 16));
        assert_eq!(hist.len(), 8);
        let m = SensorMeasurement { pixels: raw.frame(5).to_owned(), noise_applied: false };
        let single = admm_reconstruct(&m, &model, &p).unwrap();
        assert_eq!(rec.frame(5), single.frame.pixels().view());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = ForwardModel::matched(PointSpreadFunction::delta(3, 3), (8, 8)).unwrap();
        let m = SensorMeasurement { pixels: Array2::zeros((7, 8)), noise_applied: false };
        assert!(admm_reconstruct(&m, &model, &AdmmParams::default()).is_err());
        let bad = AdmmParams { rho_tv: 0.0, ..Default::default() };
        let m = SensorMeasurement { pixels: Array2::zeros((8, 8)), noise_applied: false };
        assert!(admm_reconstruct(&m, &model, &bad).is_err());
    }
}
