//! Encoder-decoder with skip connections: the spatial feature extractor at
//! depth 1 and the U-Net restorer at depth 3.

use super::blocks::{fmt_shape, ConvBnRelu, Stack2};
use super::describe::LayerRow;
use crate::nn::{concat_channels, split_channels, Clamp01, Conv3d, MaxPool3d, Module, Param, Shape, Tensor, Upsample2x};

#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    widths: Vec<usize>,
    input: ConvBnRelu,
    enc: Vec<Stack2>,
    pools: Vec<MaxPool3d>,
    up: Vec<ConvBnRelu>,
    dec: Vec<Stack2>,
    output: Conv3d,
    clamp: Option<Clamp01>,
}

impl EncoderDecoder {
    /// `widths[l]` is the channel count at pyramid level `l`; depth is `widths.len() − 1`.
    pub fn new(name: &str, in_c: usize, widths: &[usize], clamp_output: bool, seed: u64) -> Self {
        assert!(!widths.is_empty(), "at least one level");
        let depth = widths.len() - 1;
        let enc = (0..=depth)
            .map(|l| Stack2::new(&format!("{name}.enc{l}"), if l == 0 { widths[0] } else { widths[l - 1] }, widths[l], seed))
            .collect();
        let up = (1..=depth)
            .map(|l| ConvBnRelu::same2d(&format!("{name}.up{l}"), widths[l], widths[l - 1], seed))
            .collect();
        let dec = (1..=depth)
            .map(|l| Stack2::new(&format!("{name}.dec{l}"), 2 * widths[l - 1], widths[l - 1], seed))
            .collect();
        Self {
            widths: widths.to_vec(),
            input: ConvBnRelu::same2d(&format!("{name}.input"), in_c, widths[0], seed),
            enc,
            pools: (0..depth).map(|_| MaxPool3d::spatial2()).collect(),
            up,
            dec,
            output: Conv3d::same2d(&format!("{name}.output"), widths[0], 1, 3, true, seed),
            clamp: clamp_output.then(Clamp01::default),
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn output_conv_mut(&mut self) -> &mut Conv3d {
        &mut self.output
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let depth = self.depth();
        let mut h = self.input.forward(x, train);
        let mut skips = Vec::with_capacity(depth);
        h = self.enc[0].forward(&h, train);
        for l in 1..=depth {
            skips.push(h.clone());
            h = self.pools[l - 1].forward(&h, train);
            h = self.enc[l].forward(&h, train);
        }
        for l in (1..=depth).rev() {
            h = Upsample2x::forward(&h);
            h = self.up[l - 1].forward(&h, train);
            h = concat_channels(&h, &skips[l - 1]);
            h = self.dec[l - 1].forward(&h, train);
        }
        let y = self.output.forward(&h, train);
        match &mut self.clamp {
            Some(c) => c.forward(&y, train),
            None => y,
        }
    }

    /// Pooled encoder features (deepest level), used as an image embedding.
    pub fn bottleneck(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.input.forward(x, false);
        h = self.enc[0].forward(&h, false);
        for l in 1..=self.depth() {
            h = self.pools[l - 1].forward(&h, false);
            h = self.enc[l].forward(&h, false);
        }
        h
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let depth = self.depth();
        let g = match &mut self.clamp {
            Some(c) => c.backward(dy),
            None => dy.clone(),
        };
        let mut g = self.output.backward(&g);
        let mut skip_grads = Vec::with_capacity(depth);
        for l in 1..=depth {
            g = self.dec[l - 1].backward(&g);
            let (gu, gs) = split_channels(&g, self.widths[l - 1]);
            skip_grads.push(gs);
            g = self.up[l - 1].backward(&gu);
            g = Upsample2x::backward(&g);
        }
        for l in (1..=depth).rev() {
            g = self.enc[l].backward(&g);
            g = self.pools[l - 1].backward(&g);
            g.add_assign(&skip_grads[l - 1]);
        }
        g = self.enc[0].backward(&g);
        self.input.backward(&g)
    }

    pub fn rows(&self, s: Shape) -> Vec<LayerRow> {
        let f = |s: Shape| fmt_shape(s, false);
        let bn = "stride 1 Batch Normalization Relu";
        let mut rows = Vec::new();
        let mut h = self.input.out_shape(s);
        rows.push(LayerRow::new("Input layer", format!("Conv3×3, {}, {bn}", self.widths[0]), f(s), f(h)));
        let mut skips = vec![];
        let o = self.enc[0].out_shape(h);
        rows.push(LayerRow::new("2×StackEncoder", format!("Conv3×3, {}, {bn}", self.widths[0]), f(h), f(o)));
        h = o;
        for l in 1..=self.depth() {
            skips.push(h);
            let o = self.pools[l - 1].out_shape(h);
            rows.push(LayerRow::new("Maxpooling layer", "Maxpool 2×2".into(), f(h), f(o)));
            h = o;
            let o = self.enc[l].out_shape(h);
            rows.push(LayerRow::new("2×StackEncoder", format!("Conv3×3, {}, {bn}", self.widths[l]), f(h), f(o)));
            h = o;
        }
        for l in (1..=self.depth()).rev() {
            let o = self.up[l - 1].out_shape(Upsample2x::out_shape(h));
            rows.push(LayerRow::new(
                "Upsampling layer",
                format!("Upsample 2×2 Conv3×3, {}, {bn}", self.widths[l - 1]),
                f(h),
                f(o),
            ));
            let skip = skips[l - 1];
            let cat = [o[0], o[1] + skip[1], o[2], o[3], o[4]];
            rows.push(LayerRow::new("Concat", "Concatenate".into(), format!("{} {}", f(o), f(skip)), f(cat)));
            let d = self.dec[l - 1].out_shape(cat);
            rows.push(LayerRow::new("2×StackDecoder", format!("Conv3×3, {}, {bn}", self.widths[l - 1]), f(cat), f(d)));
            h = d;
        }
        let o = self.output.out_shape(h);
        let act = if self.clamp.is_some() { " Clamp[0,1]" } else { "" };
        rows.push(LayerRow::new("Output layer", format!("Conv3×3, 1, stride 1{act}"), f(h), f(o)));
        rows
    }
}

impl Module for EncoderDecoder {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.input.visit(out);
        self.enc.iter_mut().for_each(|m| m.visit(out));
        self.up.iter_mut().for_each(|m| m.visit(out));
        self.dec.iter_mut().for_each(|m| m.visit(out));
        self.output.visit(out);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.input.visit_ref(out);
        self.enc.iter().for_each(|m| m.visit_ref(out));
        self.up.iter().for_each(|m| m.visit_ref(out));
        self.dec.iter().for_each(|m| m.visit_ref(out));
        self.output.visit_ref(out);
    }
}
