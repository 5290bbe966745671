//! Network definitions over the [`crate::nn`] toolkit.

mod blocks;
mod checkpoint;
mod describe;
mod encdec;
mod gradcheck;
mod raw3dnet;
mod resnet3d;

pub use blocks::{crop_hw, pad_hw};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use describe::{describe, LayerRow};
pub use encdec::EncoderDecoder;
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GradSample};
pub use raw3dnet::Raw3dNet;
pub use resnet3d::ResNet3d;

use serde::{Deserialize, Serialize};

use crate::clip::CLIP_LEN;
use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{Module, Param, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sfe,
    Resnet3d,
    Raw3dnet,
    UnetRestorer,
}

impl ModelKind {
    pub fn is_classifier(self) -> bool {
        matches!(self, Self::Resnet3d | Self::Raw3dnet)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Sfe => "sfe",
            Self::Resnet3d => "resnet3d",
            Self::Raw3dnet => "raw3dnet",
            Self::UnetRestorer => "unet_restorer",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sfe" => Ok(Self::Sfe),
            "resnet3d" | "3d_resnet" => Ok(Self::Resnet3d),
            "raw3dnet" => Ok(Self::Raw3dnet),
            "unet" | "unet_restorer" => Ok(Self::UnetRestorer),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_channels: usize,
    /// Frames per clip; 1 for the per-frame models.
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    /// Per-level widths of the encoder-decoder part.
    pub encoder_widths: Vec<usize>,
    /// Per-stage widths of the residual part.
    pub resnet_widths: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Full-width architecture.
    pub fn standard(kind: ModelKind, height: usize, width: usize) -> Self {
        Self::with_widths(kind, height, width, &[16, 32], &[32, 64, 128, 256], &[64, 128, 256])
    }

    /// Narrow variant for CPU-scale experiments; same topology.
    pub fn reduced(kind: ModelKind, height: usize, width: usize) -> Self {
        Self::with_widths(kind, height, width, &[4, 8], &[8, 16, 32, 64], &[8, 16, 32])
    }

    fn with_widths(kind: ModelKind, height: usize, width: usize, sfe: &[usize], unet: &[usize], res: &[usize]) -> Self {
        let per_frame = matches!(kind, ModelKind::Sfe | ModelKind::UnetRestorer);
        Self {
            kind,
            in_channels: 1,
            clip_len: if per_frame { 1 } else { CLIP_LEN },
            height,
            width,
            encoder_widths: match kind {
                ModelKind::UnetRestorer => unet.to_vec(),
                ModelKind::Resnet3d => Vec::new(),
                _ => sfe.to_vec(),
            },
            resnet_widths: if kind.is_classifier() { res.to_vec() } else { Vec::new() },
            num_classes: if kind.is_classifier() { NUM_CLASSES } else { 0 },
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        [batch, self.in_channels, self.clip_len, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Geometry(m));
        if self.in_channels != 1 {
            return bad(format!("expected single-channel input, got {}", self.in_channels));
        }
        if self.kind.is_classifier() {
            if self.num_classes != NUM_CLASSES {
                return bad(format!("classifiers have {NUM_CLASSES} classes, got {}", self.num_classes));
            }
            if self.clip_len != CLIP_LEN {
                return bad(format!("clip length must be {CLIP_LEN}, got {}", self.clip_len));
            }
            if self.resnet_widths.is_empty() || self.resnet_widths.contains(&0) {
                return bad("residual widths must be non-empty and positive".into());
            }
            // The stride chain reduces space 16×; anything smaller collapses.
            if self.height < 16 || self.width < 16 {
                return bad(format!("frames of {}×{} are too small for the residual stride chain", self.height, self.width));
            }
        } else if self.clip_len != 1 {
            return bad(format!("{} operates on single frames", self.kind.label()));
        }
        if self.kind != ModelKind::Resnet3d {
            if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
                return bad("encoder widths must be non-empty and positive".into());
            }
            let m = 1usize << (self.encoder_widths.len() - 1);
            // Raw3dNet pads frames internally; the standalone models require exact tiling.
            if self.kind != ModelKind::Raw3dnet && (self.height % m != 0 || self.width % m != 0) {
                return bad(format!(
                    "{}×{} is not divisible by {m} for a depth-{} encoder",
                    self.height,
                    self.width,
                    self.encoder_widths.len() - 1
                ));
            }
        }
        Ok(())
    }
}

/// A constructed network with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    net: Net,
}

#[derive(Debug, Clone)]
enum Net {
    Sfe(EncoderDecoder),
    Resnet(ResNet3d),
    Raw(Raw3dNet),
    Unet(EncoderDecoder),
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = match spec.kind {
            ModelKind::Sfe => Net::Sfe(EncoderDecoder::new("sfe", 1, &spec.encoder_widths, false, seed)),
            ModelKind::UnetRestorer => Net::Unet(EncoderDecoder::new("unet", 1, &spec.encoder_widths, true, seed)),
            ModelKind::Resnet3d => Net::Resnet(ResNet3d::new("resnet", 1, &spec.resnet_widths, spec.num_classes, seed)),
            ModelKind::Raw3dnet => Net::Raw(Raw3dNet::new(
                EncoderDecoder::new("sfe", 1, &spec.encoder_widths, false, seed),
                ResNet3d::new("resnet", 1, &spec.resnet_widths, spec.num_classes, seed),
            )),
        };
        Ok(Self { spec, seed, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let want = self.spec.input_shape(s[0]);
        if s != want || s[0] == 0 {
            return Err(Error::Geometry(format!("input {s:?} does not match model input {want:?}")));
        }
        Ok(())
    }

    /// Logits `[N, K, 1, 1, 1]` for classifiers, frames `[N, 1, 1, H, W]` otherwise.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match &mut self.net {
            Net::Sfe(m) | Net::Unet(m) => m.forward(x, train),
            Net::Resnet(m) => m.forward(x, train),
            Net::Raw(m) => m.forward(x, train),
        })
    }

    /// Gradient w.r.t. the input of the last training forward; accumulates parameter gradients.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        match &mut self.net {
            Net::Sfe(m) | Net::Unet(m) => m.backward(dy),
            Net::Resnet(m) => m.backward(dy),
            Net::Raw(m) => m.backward(dy),
        }
    }

    /// Fixed-length descriptor of an input, used for embedding analyses.
    ///
    /// Encoder-decoders pool their deepest encoder level; classifiers pool
    /// their last residual stage.
    pub fn embed(&mut self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let pooled = |t: Tensor| -> Vec<Vec<f64>> {
            let plane = t.plane_len();
            (0..t.shape()[0])
                .map(|n| t.item(n).chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect())
                .collect()
        };
        Ok(match &mut self.net {
            Net::Sfe(m) | Net::Unet(m) => pooled(m.bottleneck(x)),
            Net::Resnet(m) => pooled(m.features(x)),
            Net::Raw(m) => {
                let clip = m.extract(x, false);
                pooled(m.resnet.features(&clip))
            }
        })
    }

    pub fn raw3dnet_mut(&mut self) -> Option<&mut Raw3dNet> {
        match &mut self.net {
            Net::Raw(m) => Some(m),
            _ => None,
        }
    }

    pub fn encoder_decoder_mut(&mut self) -> Option<&mut EncoderDecoder> {
        match &mut self.net {
            Net::Sfe(m) | Net::Unet(m) => Some(m),
            _ => None,
        }
    }

    pub fn rows(&self) -> Vec<LayerRow> {
        let s = self.spec.input_shape(1);
        match &self.net {
            Net::Sfe(m) | Net::Unet(m) => m.rows(s),
            Net::Resnet(m) => m.rows(s),
            Net::Raw(m) => {
                let mut rows = m.sfe.rows([1, 1, 1, s[3], s[4]]);
                rows.push(LayerRow::new("Stack", "Stack frames".into(), format!("{}×1×{}×{}", s[2], s[3], s[4]), format!("1×{}×{}×{}", s[2], s[3], s[4])));
                rows.extend(m.resnet.rows(s));
                rows
            }
        }
    }
}

impl Module for Model {
    fn visit<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match &mut self.net {
            Net::Sfe(m) | Net::Unet(m) => m.visit(out),
            Net::Resnet(m) => m.visit(out),
            Net::Raw(m) => m.visit(out),
        }
    }

    fn visit_ref<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match &self.net {
            Net::Sfe(m) | Net::Unet(m) => m.visit_ref(out),
            Net::Resnet(m) => m.visit_ref(out),
            Net::Raw(m) => m.visit_ref(out),
        }
    }
}

/// Stack single-channel clips `[L, H, W]` into a batch tensor `[N, 1, L, H, W]`.
pub fn batch_clips<'a, I: IntoIterator<Item = ndarray::ArrayView3<'a, f64>>>(clips: I) -> Tensor {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for c in clips {
        let d = c.dim();
        assert!(dims.is_none_or(|x| x == d), "clips differ in shape");
        dims = Some(d);
        data.extend(c.iter().copied());
        n += 1;
    }
    let (l, h, w) = dims.unwrap_or((0, 0, 0));
    Tensor::from_vec([n, 1, l, h, w], data)
}
