//! Minimal f64 tensor and layer toolkit with hand-written backward passes.
//!
//! Everything is a five-axis `[N, C, D, H, W]` tensor; 2-D layers use `D = 1`
//! and vectors use `D = H = W = 1`. Layers cache what they need during
//! `forward` and consume it in `backward`, accumulating parameter gradients.

mod conv;
mod loss;
mod misc;
mod norm;
mod optim;
mod pool;

pub use conv::Conv3d;
pub use loss::{argmax, cross_entropy, mse};
pub use misc::{concat_channels, split_channels, Clamp01, GlobalAvgPool, Linear, Relu, Upsample2x};
pub use norm::BatchNorm;
pub use optim::{Adam, AdamConfig};
pub use pool::MaxPool3d;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::labeled_rng;

pub type Shape = [usize; 5];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Elements per channel plane (`D·H·W`).
    pub fn plane_len(&self) -> usize {
        self.shape[2..].iter().product()
    }

    pub fn reshape(mut self, shape: Shape) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape changes size");
        self.shape = shape;
        self
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// How a parameter is treated by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Normalization scale and shift; trained but not decayed.
    Norm,
    /// Running statistics; never trained.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub kind: ParamKind,
}

impl Param {
    pub fn filled(name: String, shape: Vec<usize>, kind: ParamKind, v: f64) -> Self {
        let n = shape.iter().product();
        Self { name, shape, value: vec![v; n], grad: vec![0.0; n], kind }
    }

    /// Uniform in `[-bound, bound]`, seeded by the parameter name.
    pub fn uniform(name: String, shape: Vec<usize>, kind: ParamKind, bound: f64, seed: u64) -> Self {
        let mut r = labeled_rng(seed, &format!("init/{name}"));
        let mut p = Self::filled(name, shape, kind, 0.0);
        if bound > 0.0 {
            p.value.iter_mut().for_each(|v| *v = r.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>);

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        self.visit(&mut v);
        v
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        self.visit_ref(&mut v);
        v
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable()).map(|p| p.len()).sum()
    }
}

/// `C = A·B + beta·C` with row-major operands, optionally transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_in_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 7) as f64 - 3.0).collect();
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                naive[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
            }
        }
        for (aa, ta, bb, tb) in [(&a, false, &b, false), (&at, true, &b, false), (&a, false, &bt, true), (&at, true, &bt, true)] {
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, aa, ta, bb, tb, &mut c, 0.0);
            assert_eq!(c, naive);
        }
    }

    #[test]
    fn param_init_is_seeded_by_name() {
        let a = Param::uniform("x.weight".into(), vec![4, 3], ParamKind::Weight, 0.5, 7);
        let b = Param::uniform("x.weight".into(), vec![4, 3], ParamKind::Weight, 0.5, 7);
        let c = Param::uniform("y.weight".into(), vec![4, 3], ParamKind::Weight, 0.5, 7);
        assert_eq!(a, b);
        assert_ne!(a.value, c.value);
        assert!(a.value.iter().all(|v| v.abs() <= 0.5));
    }
}
