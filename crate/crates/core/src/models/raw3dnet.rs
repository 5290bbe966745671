use super::blocks::{crop_hw, pad_hw};
use super::encdec::EncoderDecoder;
use super::resnet3d::ResNet3d;
use crate::nn::{Module, Param, Shape, Tensor};

/// Shared per-frame feature extractor followed by the 3-D classifier.
///
/// Frames whose size is not a multiple of the extractor's pooling factor are
/// zero-padded at the bottom/right before extraction and cropped back after.
#[derive(Debug, Clone)]
pub struct Raw3dNet {
    pub sfe: EncoderDecoder,
    pub resnet: ResNet3d,
    cache: Option<(Shape, usize, usize)>,
}

impl Raw3dNet {
    pub fn new(sfe: EncoderDecoder, resnet: ResNet3d) -> Self {
        Self { sfe, resnet, cache: None }
    }

    fn padded(&self, h: usize, w: usize) -> (usize, usize) {
        let m = 1 << self.sfe.depth();
        (h.div_ceil(m) * m, w.div_ceil(m) * m)
    }

    /// Run the extractor on every frame and restack into a clip.
    pub fn extract(&mut self, x: &Tensor, train: bool) -> Tensor {
        let s = x.shape();
        assert_eq!(s[1], 1, "frames are single-channel");
        let (h2, w2) = self.padded(s[3], s[4]);
        let frames = x.clone().reshape([s[0] * s[2], 1, 1, s[3], s[4]]);
        let f = self.sfe.forward(&pad_hw(&frames, h2, w2), train);
        self.cache = Some((s, h2, w2));
        crop_hw(&f, s[3], s[4]).reshape(s)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let clip = self.extract(x, train);
        self.resnet.forward(&clip, train)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (s, h2, w2) = self.cache.take().expect("backward without forward");
        let g = self.resnet.backward(dy).reshape([s[0] * s[2], 1, 1, s[3], s[4]]);
        let g = self.sfe.backward(&pad_hw(&g, h2, w2));
        crop_hw(&g, s[3], s[4]).reshape(s)
    }
}

impl Module for Raw3dNet {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.sfe.visit(out);
        self.resnet.visit(out);
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.sfe.visit_ref(out);
        self.resnet.visit_ref(out);
    }
}
