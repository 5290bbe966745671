use super::blocks::{fmt_shape, ConvBnRelu};
use super::describe::LayerRow;
use crate::nn::{BatchNorm, Conv3d, GlobalAvgPool, Linear, MaxPool3d, Module, Param, Relu, Shape, Tensor};

/// conv-BN-ReLU-conv-BN, plus shortcut, then ReLU.
#[derive(Debug, Clone)]
struct ResUnit {
    first: ConvBnRelu,
    conv2: Conv3d,
    bn2: BatchNorm,
    proj: Option<(Conv3d, BatchNorm)>,
    relu: Relu,
}

impl ResUnit {
    fn new(name: &str, in_c: usize, out_c: usize, stride: usize, seed: u64) -> Self {
        let s = [stride; 3];
        let first = ConvBnRelu::new(
            Conv3d::new(&format!("{name}.conv1"), in_c, out_c, [3; 3], s, [1; 3], false, seed),
            &format!("{name}.1"),
        );
        let proj = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv3d::new(&format!("{name}.proj"), in_c, out_c, [1; 3], s, [0; 3], false, seed),
                BatchNorm::new(&format!("{name}.proj.bn"), out_c),
            )
        });
        Self {
            first,
            conv2: Conv3d::new(&format!("{name}.conv2"), out_c, out_c, [3; 3], [1; 3], [1; 3], false, seed),
            bn2: BatchNorm::new(&format!("{name}.2.bn"), out_c),
            proj,
            relu: Relu::default(),
        }
    }

    fn out_shape(&self, s: Shape) -> Shape {
        self.conv2.out_shape(self.first.out_shape(s))
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let a = self.first.forward(x, train);
        let mut b = self.bn2.forward(&self.conv2.forward(&a, train), train);
        match &mut self.proj {
            Some((c, n)) => b.add_assign(&n.forward(&c.forward(x, train), train)),
            None => b.add_assign(x),
        }
        self.relu.forward(&b, train)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.relu.backward(dy);
        let ga = self.conv2.backward(&self.bn2.backward(&g));
        let mut gx = self.first.backward(&ga);
        match &mut self.proj {
            Some((c, n)) => gx.add_assign(&c.backward(&n.backward(&g))),
            None => gx.add_assign(&g),
        }
        gx
    }
}

impl Module for ResUnit {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.first.visit(out);
        self.conv2.visit(out);
        self.bn2.visit(out);
        if let Some((c, n)) = &mut self.proj {
            c.visit(out);
            n.visit(out);
        }
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.first.visit_ref(out);
        self.conv2.visit_ref(out);
        self.bn2.visit_ref(out);
        if let Some((c, n)) = &self.proj {
            c.visit_ref(out);
            n.visit_ref(out);
        }
    }
}

/// 3-D residual classifier over `[N, C, L, H, W]` clips.
#[derive(Debug, Clone)]
pub struct ResNet3d {
    widths: Vec<usize>,
    stem: ConvBnRelu,
    pool: MaxPool3d,
    units: Vec<ResUnit>,
    gap: GlobalAvgPool,
    fc: Linear,
}

impl ResNet3d {
    pub fn new(name: &str, in_c: usize, widths: &[usize], classes: usize, seed: u64) -> Self {
        assert!(!widths.is_empty(), "at least one stage");
        let stem = ConvBnRelu::new(
            Conv3d::new(&format!("{name}.stem.conv"), in_c, widths[0], [7; 3], [1, 2, 2], [3; 3], false, seed),
            &format!("{name}.stem"),
        );
        let units = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let in_w = if i == 0 { widths[0] } else { widths[i - 1] };
                ResUnit::new(&format!("{name}.layer{}", i + 1), in_w, w, if i == 0 { 1 } else { 2 }, seed)
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            stem,
            pool: MaxPool3d::new([3; 3], [2; 3], [1; 3]),
            units,
            gap: GlobalAvgPool::default(),
            fc: Linear::new(&format!("{name}.fc"), *widths.last().expect("non-empty"), classes, seed),
        }
    }

    /// Shape after every stage, starting with the stem.
    pub fn stage_shapes(&self, s: Shape) -> Vec<Shape> {
        let mut out = vec![self.stem.out_shape(s)];
        let mut h = self.pool.out_shape(out[0]);
        out.push(h);
        for u in &self.units {
            h = u.out_shape(h);
            out.push(h);
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.stem.forward(x, train);
        h = self.pool.forward(&h, train);
        for u in &mut self.units {
            h = u.forward(&h, train);
        }
        let pooled = self.gap.forward(&h);
        self.fc.forward(&pooled, train)
    }

    /// Globally pooled final-stage features.
    pub fn features(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.stem.forward(x, false);
        h = self.pool.forward(&h, false);
        for u in &mut self.units {
            h = u.forward(&h, false);
        }
        self.gap.forward(&h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = self.gap.backward(&self.fc.backward(dy));
        for u in self.units.iter_mut().rev() {
            g = u.backward(&g);
        }
        g = self.pool.backward(&g);
        self.stem.backward(&g)
    }

    pub fn rows(&self, s: Shape) -> Vec<LayerRow> {
        let f = |s: Shape| fmt_shape(s, true);
        let shapes = self.stage_shapes(s);
        let mut rows = vec![
            LayerRow::new(
                "Conv1",
                format!("Conv7×7×7,{}, stride (1,2,2) Batch Normalization Relu", self.widths[0]),
                f(s),
                f(shapes[0]),
            ),
            LayerRow::new("Maxpool", "Maxpool 3×3×3, stride 2".into(), f(shapes[0]), f(shapes[1])),
        ];
        for (i, &w) in self.widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            rows.push(LayerRow::new(
                &format!("Layer{}", i + 1),
                format!("[3×3×3, {w}, stride {stride}; 3×3×3, {w}]"),
                f(shapes[i + 1]),
                f(shapes[i + 2]),
            ));
        }
        let last = *shapes.last().expect("stages");
        let c = last[1];
        rows.push(LayerRow::new("Avgpool", "AvgPool3d".into(), f(last), format!("{c}×1×1×1")));
        rows.push(LayerRow::new("Reshape", "View".into(), format!("{c}×1×1×1"), c.to_string()));
        let k = self.fc.weight.shape[0];
        rows.push(LayerRow::new("Fc", format!("{k}d-fc"), c.to_string(), k.to_string()));
        rows
    }
}

impl Module for ResNet3d {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.stem.visit(out);
        self.units.iter_mut().for_each(|u| u.visit(out));
        self.fc.visit(out);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.stem.visit_ref(out);
        self.units.iter().for_each(|u| u.visit_ref(out));
        self.fc.visit_ref(out);
    }
}
