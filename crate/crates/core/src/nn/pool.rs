use super::{Shape, Tensor};

/// Max pooling; padded positions never win. Ties go to the first maximum.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    cache: Option<(Shape, Vec<usize>)>,
}

impl MaxPool3d {
    pub fn new(k: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { k, stride, pad, cache: None }
    }

    /// 2×2 spatial pooling of 2-D maps.
    pub fn spatial2() -> Self {
        Self::new([1, 2, 2], [1, 2, 2], [0, 0, 0])
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        let o = |i: usize| (s[i + 2] + 2 * self.pad[i]).saturating_sub(self.k[i]) / self.stride[i] + 1;
        [s[0], s[1], o(0), o(1), o(2)]
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let s = x.shape();
        let os = self.out_shape(s);
        let mut y = Tensor::zeros(os);
        let mut arg = vec![0usize; y.len()];
        let (d, h, w) = (s[2], s[3], s[4]);
        let mut oi = 0;
        for nc in 0..s[0] * s[1] {
            let base = nc * d * h * w;
            for z in 0..os[2] {
                for yy in 0..os[3] {
                    for xx in 0..os[4] {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = usize::MAX;
                        for a in 0..self.k[0] {
                            let iz = (z * self.stride[0] + a) as isize - self.pad[0] as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for b in 0..self.k[1] {
                                let iy = (yy * self.stride[1] + b) as isize - self.pad[1] as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for e in 0..self.k[2] {
                                    let ix = (xx * self.stride[2] + e) as isize - self.pad[2] as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let i = base + (iz as usize * h + iy as usize) * w + ix as usize;
                                    if x.data()[i] > best || best_i == usize::MAX {
                                        best = x.data()[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        y.data_mut()[oi] = best;
                        arg[oi] = best_i;
                        oi += 1;
                    }
                }
            }
        }
        self.cache = train.then_some((s, arg));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (s, arg) = self.cache.take().expect("backward without a training forward");
        let mut dx = Tensor::zeros(s);
        for (g, &i) in dy.data().iter().zip(&arg) {
            dx.data_mut()[i] += g;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric, probe, rel_err};

    #[test]
    fn table_shapes() {
        let p = MaxPool3d::new([3, 3, 3], [2, 2, 2], [1, 1, 1]);
        assert_eq!(p.out_shape([1, 64, 8, 120, 160]), [1, 64, 4, 60, 80]);
        assert_eq!(MaxPool3d::spatial2().out_shape([1, 16, 1, 240, 320]), [1, 16, 1, 120, 160]);
    }

    #[test]
    fn picks_maxima_and_routes_gradient() {
        let x = Tensor::from_vec([1, 1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 7.0, 8.0]);
        let mut p = MaxPool3d::spatial2();
        let y = p.forward(&x, true);
        assert_eq!(y.data(), &[5.0, 8.0]);
        let dx = p.backward(&Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0, 2.0]));
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn padded_pool_gradient() {
        let data = (0..2 * 5 * 6 * 7).map(|i| ((i * 7919) % 1013) as f64 / 1013.0).collect();
        let x = Tensor::from_vec([1, 2, 5, 6, 7], data);
        let mut p = MaxPool3d::new([3, 3, 3], [2, 2, 2], [1, 1, 1]);
        let y = p.forward(&x, true);
        let (_, g) = probe(&y);
        let dx = p.backward(&g);
        for i in (0..x.len()).step_by(3) {
            let n = numeric(&x, i, 1e-7, |xx| probe(&p.clone().forward(xx, false)).0);
            assert!(rel_err(dx.data()[i], n) < 1e-6);
        }
    }
}
