use super::{gemm, Module, Param, ParamKind, Shape, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.mask = train.then(|| x.data().iter().map(|&v| v > 0.0).collect());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("backward without a training forward");
        let mut dx = dy.clone();
        dx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| {
            if !m {
                *g = 0.0
            }
        });
        dx
    }
}

/// Clamp to `[0, 1]`; the gradient passes only where the input is inside.
#[derive(Debug, Clone, Default)]
pub struct Clamp01 {
    mask: Option<Vec<bool>>,
}

impl Clamp01 {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self.mask = train.then(|| x.data().iter().map(|&v| (0.0..=1.0).contains(&v)).collect());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("backward without a training forward");
        let mut dx = dy.clone();
        dx.data_mut().iter_mut().zip(mask).for_each(|(g, m)| {
            if !m {
                *g = 0.0
            }
        });
        dx
    }
}

/// Nearest-neighbor 2× upsampling of `H` and `W`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn out_shape(s: Shape) -> Shape {
        [s[0], s[1], s[2], 2 * s[3], 2 * s[4]]
    }

    pub fn forward(x: &Tensor) -> Tensor {
        let s = x.shape();
        let (h, w) = (s[3], s[4]);
        let mut y = Tensor::zeros(Self::out_shape(s));
        for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(4 * h * w)) {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        y
    }

    pub fn backward(dy: &Tensor) -> Tensor {
        let s = dy.shape();
        let (h, w) = (s[3] / 2, s[4] / 2);
        let mut dx = Tensor::zeros([s[0], s[1], s[2], h, w]);
        for (src, dst) in dy.data().chunks(4 * h * w).zip(dx.data_mut().chunks_mut(h * w)) {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                }
            }
        }
        dx
    }
}

/// Stack `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(sa[0] == sb[0] && sa[2..] == sb[2..], "concat shape mismatch {sa:?} {sb:?}");
    let mut y = Tensor::zeros([sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]]);
    for n in 0..sa[0] {
        let out = y.item_mut(n);
        let la = a.item_len();
        out[..la].copy_from_slice(a.item(n));
        out[la..].copy_from_slice(b.item(n));
    }
    y
}

/// Inverse of [`concat_channels`]: the first `ca` channels and the rest.
pub fn split_channels(y: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let s = y.shape();
    let plane = y.plane_len();
    let mut a = Tensor::zeros([s[0], ca, s[2], s[3], s[4]]);
    let mut b = Tensor::zeros([s[0], s[1] - ca, s[2], s[3], s[4]]);
    for n in 0..s[0] {
        let item = y.item(n);
        a.item_mut(n).copy_from_slice(&item[..ca * plane]);
        b.item_mut(n).copy_from_slice(&item[ca * plane..]);
    }
    (a, b)
}

/// Mean over `D·H·W`, producing `[N, C, 1, 1, 1]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<Shape>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let plane = x.plane_len();
        let data = x.data().chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect();
        self.shape = Some(s);
        Tensor::from_vec([s[0], s[1], 1, 1, 1], data)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let s = self.shape.take().expect("backward without forward");
        let plane: usize = s[2..].iter().product();
        let mut dx = Tensor::zeros(s);
        for (g, chunk) in dy.data().iter().zip(dx.data_mut().chunks_mut(plane)) {
            chunk.fill(g / plane as f64);
        }
        dx
    }
}

/// Fully connected layer on `[N, F, 1, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_f: usize,
    out_f: usize,
    cache: Option<Tensor>,
}

impl Linear {
    /// Weights and bias uniform in `±1/√fan_in`.
    pub fn new(name: &str, in_f: usize, out_f: usize, seed: u64) -> Self {
        let bound = 1.0 / (in_f as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![out_f, in_f], ParamKind::Weight, bound, seed),
            bias: Param::uniform(format!("{name}.bias"), vec![out_f], ParamKind::Bias, bound, seed),
            in_f,
            out_f,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let n = x.shape()[0];
        assert_eq!(x.item_len(), self.in_f, "{}: feature mismatch", self.weight.name);
        let mut y = Tensor::zeros([n, self.out_f, 1, 1, 1]);
        for b in 0..n {
            y.item_mut(b).copy_from_slice(&self.bias.value);
        }
        gemm(n, self.in_f, self.out_f, x.data(), false, &self.weight.value, true, y.data_mut(), 1.0);
        self.cache = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("backward without a training forward");
        let n = x.shape()[0];
        gemm(self.out_f, n, self.in_f, dy.data(), true, x.data(), false, &mut self.weight.grad, 1.0);
        for b in 0..n {
            self.bias.grad.iter_mut().zip(dy.item(b)).for_each(|(g, d)| *g += d);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, self.out_f, self.in_f, dy.data(), false, &self.weight.value, false, dx.data_mut(), 0.0);
        dx
    }
}

impl Module for Linear {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }
}
