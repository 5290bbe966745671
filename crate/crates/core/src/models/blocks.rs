use crate::nn::{BatchNorm, Conv3d, Module, Param, Relu, Shape, Tensor};

/// Convolution (no bias), batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv3d,
    pub bn: BatchNorm,
    relu: Relu,
}

impl ConvBnRelu {
    pub fn new(conv: Conv3d, name: &str) -> Self {
        let bn = BatchNorm::new(&format!("{name}.bn"), conv.out_channels());
        Self { conv, bn, relu: Relu::default() }
    }

    pub fn same2d(name: &str, in_c: usize, out_c: usize, seed: u64) -> Self {
        Self::new(Conv3d::same2d(&format!("{name}.conv"), in_c, out_c, 3, false, seed), name)
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        self.conv.out_shape(s)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.relu.forward(&y, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.relu.backward(dy);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

impl Module for ConvBnRelu {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.conv.visit(out);
        self.bn.visit(out);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.conv.visit_ref(out);
        self.bn.visit_ref(out);
    }
}

/// Two 3×3 conv-BN-ReLU layers in sequence.
#[derive(Debug, Clone)]
pub struct Stack2 {
    pub a: ConvBnRelu,
    pub b: ConvBnRelu,
}

impl Stack2 {
    pub fn new(name: &str, in_c: usize, out_c: usize, seed: u64) -> Self {
        Self {
            a: ConvBnRelu::same2d(&format!("{name}.0"), in_c, out_c, seed),
            b: ConvBnRelu::same2d(&format!("{name}.1"), out_c, out_c, seed),
        }
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        self.b.out_shape(self.a.out_shape(s))
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.a.forward(x, train);
        self.b.forward(&y, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.b.backward(dy);
        self.a.backward(&g)
    }
}

impl Module for Stack2 {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.a.visit(out);
        self.b.visit(out);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.a.visit_ref(out);
        self.b.visit_ref(out);
    }
}

/// Zero-pad `H`, `W` at the bottom/right to `(h, w)`.
pub fn pad_hw(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    if (s[3], s[4]) == (h, w) {
        return x.clone();
    }
    let mut y = Tensor::zeros([s[0], s[1], s[2], h, w]);
    for (src, dst) in x.data().chunks(s[3] * s[4]).zip(y.data_mut().chunks_mut(h * w)) {
        for i in 0..s[3] {
            dst[i * w..i * w + s[4]].copy_from_slice(&src[i * s[4]..(i + 1) * s[4]]);
        }
    }
    y
}

/// Keep the top-left `(h, w)` window; the adjoint of [`pad_hw`].
pub fn crop_hw(x: &Tensor, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    if (s[3], s[4]) == (h, w) {
        return x.clone();
    }
    let mut y = Tensor::zeros([s[0], s[1], s[2], h, w]);
    for (src, dst) in x.data().chunks(s[3] * s[4]).zip(y.data_mut().chunks_mut(h * w)) {
        for i in 0..h {
            dst[i * w..(i + 1) * w].copy_from_slice(&src[i * s[4]..i * s[4] + w]);
        }
    }
    y
}

/// Render a shape without the batch axis, dropping singleton depth for 2-D maps.
pub fn fmt_shape(s: Shape, volumetric: bool) -> String {
    let dims: Vec<usize> = if volumetric { s[1..].to_vec() } else { vec![s[1], s[3], s[4]] };
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}
