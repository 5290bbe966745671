use super::{gemm, Module, Param, ParamKind, Shape, Tensor};

const DIRECT_MAX_PAIRS: usize = 64;
const DIRECT_MAX_TAPS: usize = 343;

/// Visit every `(tap, output offset, input offset, length)` row span of a
/// stride-1 layer.
fn for_each_row<F: FnMut(usize, usize, usize, usize)>(
    k: [usize; 3],
    pad: [usize; 3],
    dims: [usize; 3],
    out: [usize; 3],
    mut f: F,
) {
    let [d, h, w] = dims;
    let [od, oh, ow] = out;
    let mut t = 0;
    for a in 0..k[0] {
        for b in 0..k[1] {
            for e in 0..k[2] {
                let (zl, zh) = valid_range(d, od, a, 1, pad[0]);
                let (yl, yh) = valid_range(h, oh, b, 1, pad[1]);
                let (xl, xh) = valid_range(w, ow, e, 1, pad[2]);
                if xl < xh {
                    for oz in zl..zh {
                        let iz = oz + a - pad[0];
                        for oy in yl..yh {
                            let iy = oy + b - pad[1];
                            f(t, (oz * oh + oy) * ow + xl, (iz * h + iy) * w + xl + e - pad[2], xh - xl);
                        }
                    }
                }
                t += 1;
            }
        }
    }
}

/// Volumetric convolution via im2col and a single GEMM per batch item.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_c: usize,
    out_c: usize,
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    cache: Option<Tensor>,
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p).saturating_sub(k) / s + 1
}

/// Output positions `o` whose input coordinate `o·s + e − p` lies in `[0, n)`.
fn valid_range(n: usize, out: usize, e: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > e { (p - e).div_ceil(s) } else { 0 };
    let hi = if n + p > e { (n + p - e).div_ceil(s).min(out) } else { 0 };
    (lo, hi.max(lo))
}

impl Conv3d {
    /// He-uniform weights; bias (if any) starts at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        bias: bool,
        seed: u64,
    ) -> Self {
        let fan_in = (in_c * k.iter().product::<usize>()) as f64;
        let weight = Param::uniform(
            format!("{name}.weight"),
            vec![out_c, in_c, k[0], k[1], k[2]],
            ParamKind::Weight,
            (6.0 / fan_in).sqrt(),
            seed,
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), vec![out_c], ParamKind::Bias, 0.0));
        Self { weight, bias, in_c, out_c, k, stride, pad, cache: None }
    }

    /// 2-D convolution with "same" padding for odd `k`.
    pub fn same2d(name: &str, in_c: usize, out_c: usize, k: usize, bias: bool, seed: u64) -> Self {
        Self::new(name, in_c, out_c, [1, k, k], [1, 1, 1], [0, k / 2, k / 2], bias, seed)
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        [
            s[0],
            self.out_c,
            out_len(s[2], self.k[0], self.stride[0], self.pad[0]),
            out_len(s[3], self.k[1], self.stride[1], self.pad[1]),
            out_len(s[4], self.k[2], self.stride[2], self.pad[2]),
        ]
    }

    fn rows(&self) -> usize {
        self.in_c * self.k.iter().product::<usize>()
    }

    fn im2col(&self, x: &[f64], dims: [usize; 3], out: [usize; 3], cols: &mut [f64]) {
        let [d, h, w] = dims;
        let [od, oh, ow] = out;
        let p = od * oh * ow;
        let [kd, kh, kw] = self.k;
        let mut r = 0;
        for c in 0..self.in_c {
            let xc = &x[c * d * h * w..(c + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = &mut cols[r * p..(r + 1) * p];
                        row.fill(0.0);
                        let (zl, zh) = valid_range(d, od, a, self.stride[0], self.pad[0]);
                        let (yl, yh) = valid_range(h, oh, b, self.stride[1], self.pad[1]);
                        let (xl, xh) = valid_range(w, ow, e, self.stride[2], self.pad[2]);
                        for oz in zl..zh {
                            let iz = oz * self.stride[0] + a - self.pad[0];
                            for oy in yl..yh {
                                let iy = oy * self.stride[1] + b - self.pad[1];
                                let src = &xc[(iz * h + iy) * w..];
                                let dst = &mut row[(oz * oh + oy) * ow..];
                                for ox in xl..xh {
                                    dst[ox] = src[ox * self.stride[2] + e - self.pad[2]];
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dims: [usize; 3], out: [usize; 3], dx: &mut [f64]) {
        let [d, h, w] = dims;
        let [od, oh, ow] = out;
        let p = od * oh * ow;
        let [kd, kh, kw] = self.k;
        let mut r = 0;
        for c in 0..self.in_c {
            let xc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let row = &cols[r * p..(r + 1) * p];
                        let (zl, zh) = valid_range(d, od, a, self.stride[0], self.pad[0]);
                        let (yl, yh) = valid_range(h, oh, b, self.stride[1], self.pad[1]);
                        let (xl, xh) = valid_range(w, ow, e, self.stride[2], self.pad[2]);
                        for oz in zl..zh {
                            let iz = oz * self.stride[0] + a - self.pad[0];
                            for oy in yl..yh {
                                let iy = oy * self.stride[1] + b - self.pad[1];
                                let dst = &mut xc[(iz * h + iy) * w..];
                                let src = &row[(oz * oh + oy) * ow..];
                                for ox in xl..xh {
                                    dst[ox * self.stride[2] + e - self.pad[2]] += src[ox];
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    /// Narrow stride-1 layers are faster as shifted row updates than as a
    /// GEMM whose left operand has only a few rows.
    fn use_direct(&self) -> bool {
        self.stride == [1, 1, 1]
            && self.in_c * self.out_c <= DIRECT_MAX_PAIRS
            && self.k.iter().product::<usize>() <= DIRECT_MAX_TAPS
    }

    fn forward_direct(&self, x: &[f64], dims: [usize; 3], out: [usize; 3], y: &mut [f64]) {
        let plane_in: usize = dims.iter().product();
        let p: usize = out.iter().product();
        let taps: usize = self.k.iter().product();
        for o in 0..self.out_c {
            let yo = &mut y[o * p..(o + 1) * p];
            for c in 0..self.in_c {
                let xc = &x[c * plane_in..(c + 1) * plane_in];
                let wk = &self.weight.value[(o * self.in_c + c) * taps..][..taps];
                for_each_row(self.k, self.pad, dims, out, |t, oo, io, len| {
                    let wv = wk[t];
                    for (d, s) in yo[oo..oo + len].iter_mut().zip(&xc[io..io + len]) {
                        *d += wv * s;
                    }
                });
            }
        }
    }

    fn backward_direct(&mut self, x: &[f64], dy: &[f64], dims: [usize; 3], out: [usize; 3], dx: &mut [f64]) {
        let plane_in: usize = dims.iter().product();
        let p: usize = out.iter().product();
        let taps: usize = self.k.iter().product();
        for o in 0..self.out_c {
            let go = &dy[o * p..(o + 1) * p];
            for c in 0..self.in_c {
                let xc = &x[c * plane_in..(c + 1) * plane_in];
                let base = (o * self.in_c + c) * taps;
                let wk = &self.weight.value[base..base + taps];
                let gk = &mut self.weight.grad[base..base + taps];
                let dxc = &mut dx[c * plane_in..(c + 1) * plane_in];
                let mut acc = [0.0f64; DIRECT_MAX_TAPS];
                let acc = &mut acc[..taps];
                for_each_row(self.k, self.pad, dims, out, |t, oo, io, len| {
                    let g = &go[oo..oo + len];
                    let mut dot = 0.0;
                    for (gv, xv) in g.iter().zip(&xc[io..io + len]) {
                        dot += gv * xv;
                    }
                    acc[t] += dot;
                    let wv = wk[t];
                    for (d, gv) in dxc[io..io + len].iter_mut().zip(g) {
                        *d += wv * gv;
                    }
                });
                for (gk, a) in gk.iter_mut().zip(acc.iter()) {
                    *gk += a;
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let s = x.shape();
        assert_eq!(s[1], self.in_c, "{}: channel mismatch", self.weight.name);
        let os = self.out_shape(s);
        let dims = [s[2], s[3], s[4]];
        let out = [os[2], os[3], os[4]];
        let p: usize = out.iter().product();
        let k = self.rows();
        let mut y = Tensor::zeros(os);
        if self.use_direct() {
            for n in 0..s[0] {
                let yn = y.item_mut(n);
                if let Some(b) = &self.bias {
                    for (o, chunk) in yn.chunks_mut(p).enumerate() {
                        chunk.fill(b.value[o]);
                    }
                }
                self.forward_direct(x.item(n), dims, out, yn);
            }
            self.cache = train.then(|| x.clone());
            return y;
        }
        let mut cols = vec![0.0; k * p];
        for n in 0..s[0] {
            self.im2col(x.item(n), dims, out, &mut cols);
            let yn = y.item_mut(n);
            gemm(self.out_c, k, p, &self.weight.value, false, &cols, false, yn, 0.0);
            if let Some(b) = &self.bias {
                for (o, chunk) in yn.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += b.value[o]);
                }
            }
        }
        self.cache = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("backward without a training forward");
        let s = x.shape();
        let os = dy.shape();
        let dims = [s[2], s[3], s[4]];
        let out = [os[2], os[3], os[4]];
        let p: usize = out.iter().product();
        let k = self.rows();
        let mut dx = Tensor::zeros(s);
        if self.use_direct() {
            for n in 0..s[0] {
                self.backward_direct(x.item(n), dy.item(n), dims, out, dx.item_mut(n));
                if let Some(b) = &mut self.bias {
                    for (o, chunk) in dy.item(n).chunks(p).enumerate() {
                        b.grad[o] += chunk.iter().sum::<f64>();
                    }
                }
            }
            return dx;
        }
        let mut cols = vec![0.0; k * p];
        let mut dcols = vec![0.0; k * p];
        for n in 0..s[0] {
            let dyn_ = dy.item(n);
            self.im2col(x.item(n), dims, out, &mut cols);
            gemm(self.out_c, p, k, dyn_, false, &cols, true, &mut self.weight.grad, 1.0);
            gemm(k, self.out_c, p, &self.weight.value, true, dyn_, false, &mut dcols, 0.0);
            self.col2im(&dcols, dims, out, dx.item_mut(n));
            if let Some(b) = &mut self.bias {
                for (o, chunk) in dyn_.chunks(p).enumerate() {
                    b.grad[o] += chunk.iter().sum::<f64>();
                }
            }
        }
        dx
    }
}

impl Module for Conv3d {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        if let Some(b) = &self.bias {
            out.push(b);
        }
    }
}
