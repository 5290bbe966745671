use super::{Module, Param, ParamKind, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `N·D·H·W`.
///
/// Training normalizes with the biased batch variance and folds the unbiased
/// variance into the running estimate; evaluation uses the running estimate.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        let c = vec![channels];
        Self {
            gamma: Param::filled(format!("{name}.gamma"), c.clone(), ParamKind::Norm, 1.0),
            beta: Param::filled(format!("{name}.beta"), c.clone(), ParamKind::Norm, 0.0),
            running_mean: Param::filled(format!("{name}.running_mean"), c.clone(), ParamKind::Buffer, 0.0),
            running_var: Param::filled(format!("{name}.running_var"), c, ParamKind::Buffer, 1.0),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let s = x.shape();
        let (c, plane) = (s[1], x.plane_len());
        assert_eq!(c, self.gamma.len(), "{}: channel mismatch", self.gamma.name);
        let count = (s[0] * plane) as f64;
        // Planes of channel `ch` are every `c`-th chunk.
        let planes = |ch: usize| x.data().chunks(plane).skip(ch).step_by(c);
        let mut mean = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (m, var) = if train {
                let m = planes(ch).map(|p| p.iter().sum::<f64>()).sum::<f64>() / count;
                let var = planes(ch).map(|p| p.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sum::<f64>() / count;
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                let rm = &mut self.running_mean.value[ch];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
                let rv = &mut self.running_var.value[ch];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased;
                (m, var)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            mean[ch] = m;
            inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
        }
        let mut xhat = x.clone();
        let mut y = Tensor::zeros(s);
        for (k, (xh, yp)) in xhat.data_mut().chunks_mut(plane).zip(y.data_mut().chunks_mut(plane)).enumerate() {
            let ch = k % c;
            let (m, is) = (mean[ch], inv_std[ch]);
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for (v, out) in xh.iter_mut().zip(yp) {
                *v = (*v - m) * is;
                *out = g * *v + b;
            }
        }
        self.cache = Some(Cache { xhat, inv_std, train });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let Cache { xhat, inv_std, train } = self.cache.take().expect("backward without forward");
        let s = dy.shape();
        let (c, plane) = (s[1], dy.plane_len());
        let count = (s[0] * plane) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (k, (g, xh)) in dy.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
            let ch = k % c;
            let (mut a, mut b) = (0.0, 0.0);
            for (gv, xv) in g.iter().zip(xh) {
                a += gv;
                b += gv * xv;
            }
            sum_dy[ch] += a;
            sum_dy_xhat[ch] += b;
        }
        for ch in 0..c {
            self.beta.grad[ch] += sum_dy[ch];
            self.gamma.grad[ch] += sum_dy_xhat[ch];
        }
        let mut dx = Tensor::zeros(s);
        for (k, ((d, g), xh)) in dx.data_mut().chunks_mut(plane).zip(dy.data().chunks(plane)).zip(xhat.data().chunks(plane)).enumerate() {
            let ch = k % c;
            let kk = self.gamma.value[ch] * inv_std[ch];
            if train {
                let (mdy, mdyx) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
                for ((dv, gv), xv) in d.iter_mut().zip(g).zip(xh) {
                    *dv = kk * (gv - mdy - xv * mdyx);
                }
            } else {
                for (dv, gv) in d.iter_mut().zip(g) {
                    *dv = kk * gv;
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }
}
