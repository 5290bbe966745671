//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rawlens_core::dataset::{Layout, SplitConfig};
use rawlens_core::imageio::ColorPolicy;
use rawlens_core::models::ModelKind;
use rawlens_core::optics::SensorGeometry;
use rawlens_core::recon::AdmmParams;
use rawlens_core::sampling::{SampleMethod, SampleSpec};
use rawlens_core::training::{DataVariant, GridCell, GridConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root of every derived seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub recon: ReconSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub grid: GridSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// A previously written manifest; takes precedence over `root`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub layout: Layout,
    pub min_frames: usize,
    pub height: usize,
    pub width: usize,
    pub color: ColorPolicy,
    pub clip_len: usize,
    pub max_per_sequence: usize,
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let split = SplitConfig::default();
        Self {
            root: None,
            manifest: None,
            layout: Layout::Cambridge,
            min_frames: 8,
            height: 240,
            width: 320,
            color: ColorPolicy::Luma,
            clip_len: 8,
            max_per_sequence: 4,
            test_fraction: split.test_fraction,
            val_fraction_of_train: split.val_fraction_of_train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfKind {
    Delta,
    Gaussian,
    #[default]
    Caustic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsSection {
    pub psf: PsfKind,
    /// Image file for `psf = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psf_path: Option<PathBuf>,
    pub psf_height: usize,
    pub psf_width: usize,
    /// Gaussian PSF standard deviation in pixels.
    pub psf_sigma: f64,
    pub noise_sigma: f64,
    /// Sensor and convolution-plane size; by default the sensor equals the
    /// scene and the plane is the full linear-convolution size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor_w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_w: Option<usize>,
}

impl Default for OpticsSection {
    fn default() -> Self {
        Self {
            psf: PsfKind::Caustic,
            psf_path: None,
            psf_height: 63,
            psf_width: 63,
            psf_sigma: 2.0,
            noise_sigma: 0.0,
            sensor_h: None,
            sensor_w: None,
            pad_h: None,
            pad_w: None,
        }
    }
}

impl OpticsSection {
    /// Geometry for a scene of `scene` pixels and a PSF of `psf` pixels.
    pub fn geometry(&self, scene: (usize, usize), psf: (usize, usize)) -> SensorGeometry {
        let m = SensorGeometry::matched(scene, psf);
        SensorGeometry {
            sensor_h: self.sensor_h.unwrap_or(m.sensor_h),
            sensor_w: self.sensor_w.unwrap_or(m.sensor_w),
            pad_h: self.pad_h.unwrap_or(m.pad_h),
            pad_w: self.pad_w.unwrap_or(m.pad_w),
            ..m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub method: SampleMethod,
    pub width: usize,
    pub height: usize,
    pub keep_fraction: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self { method: SampleMethod::None, width: 100, height: 75, keep_fraction: 1.0 }
    }
}

impl SamplingSection {
    /// `None` when no down-sampling is requested.
    pub fn spec(&self, seed: u64) -> Option<SampleSpec> {
        match self.method {
            SampleMethod::None => None,
            SampleMethod::Erase => Some(SampleSpec::erase(self.width, self.height, self.keep_fraction).with_seed(seed)),
            m => Some(SampleSpec::new(m, self.width, self.height).with_seed(seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Input variant the classifier sees.
    pub variant: DataVariant,
    /// Narrow widths for desk-scale runs.
    pub reduced: bool,
    /// Trained weights for `eval`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelKind::Raw3dnet, variant: DataVariant::Lensless, reduced: false, checkpoint: None }
    }
}

fn default_restorer() -> TrainConfig {
    TrainConfig { epochs: 20, batch_size: 8, ..TrainConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub admm: AdmmParams,
    /// Training schedule of the learned restorer.
    pub restorer: TrainConfig,
    pub restorer_max_frames: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        Self { admm: AdmmParams::default(), restorer: default_restorer(), restorer_max_frames: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    #[default]
    File,
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisSlice {
    #[default]
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub backend: EmbeddingSource,
    /// CSV or JSON vectors keyed by sequence id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// SFE or U-Net weights for the checkpoint backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Confusion matrix CSV written by `eval`, for error attribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<PathBuf>,
    /// Frame of each sequence that is embedded.
    pub frame_index: usize,
    pub slice: AnalysisSlice,
    pub evaluated_classes: Vec<u8>,
    pub candidate_classes: Vec<u8>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            backend: EmbeddingSource::File,
            embeddings: None,
            checkpoint: None,
            confusion: None,
            frame_index: 0,
            slice: AnalysisSlice::All,
            evaluated_classes: vec![1, 4, 7],
            candidate_classes: vec![1, 4, 7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/latest") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub cells: Vec<GridCell>,
    /// Append the five down-sampling cells for this model kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_cells: Option<ModelKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            dataset: DatasetSection::default(),
            optics: OpticsSection::default(),
            sampling: SamplingSection::default(),
            model: ModelSection::default(),
            training: TrainConfig::default(),
            recon: ReconSection::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
            grid: GridSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Parse `text`, apply `section.key=value` overrides, and validate.
    ///
    /// Relative paths are taken relative to `base`.
    pub fn load_str(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: Self = toml::Value::Table(doc).try_into().context("config does not match the schema")?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let base = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::load_str(&text, overrides, base).with_context(|| format!("in config {}", p.display()))
            }
            None => Self::load_str(&format!("schema_version = {SCHEMA_VERSION}"), overrides, Path::new(".")),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        fix(&mut self.dataset.manifest);
        fix(&mut self.optics.psf_path);
        fix(&mut self.model.checkpoint);
        fix(&mut self.analysis.embeddings);
        fix(&mut self.analysis.checkpoint);
        fix(&mut self.analysis.confusion);
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        for (key, path) in [
            ("dataset.root", &self.dataset.root),
            ("dataset.manifest", &self.dataset.manifest),
            ("optics.psf_path", &self.optics.psf_path),
            ("model.checkpoint", &self.model.checkpoint),
            ("analysis.embeddings", &self.analysis.embeddings),
            ("analysis.checkpoint", &self.analysis.checkpoint),
            ("analysis.confusion", &self.analysis.confusion),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{key}: {} does not exist", p.display());
                }
            }
        }
        if self.optics.psf == PsfKind::File && self.optics.psf_path.is_none() {
            bail!("optics.psf = \"file\" needs optics.psf_path");
        }
        if self.optics.psf_height == 0 || self.optics.psf_width == 0 {
            bail!("optics PSF size must be positive");
        }
        if self.dataset.height == 0 || self.dataset.width == 0 || self.dataset.clip_len == 0 {
            bail!("dataset height, width, and clip_len must be positive");
        }
        self.training.validate()?;
        self.recon.admm.validate()?;
        Ok(())
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_fraction: self.dataset.test_fraction,
            val_fraction_of_train: self.dataset.val_fraction_of_train,
            seed: rawlens_core::seed::derive_seed(self.seed, "split"),
        }
    }

    /// Grid settings shared by `train`, `eval`, and `grid`.
    pub fn grid_config(&self, cells: Vec<GridCell>) -> GridConfig {
        let mut g = GridConfig::new(cells);
        g.train = TrainConfig { seed: rawlens_core::seed::derive_seed(self.seed, "train"), ..self.training.clone() };
        g.reduced = self.model.reduced;
        g.admm = self.recon.admm;
        g.restorer = self.recon.restorer.clone();
        g.restorer_max_frames = self.recon.restorer_max_frames;
        g.noise_sigma = self.optics.noise_sigma;
        g.seed = self.seed;
        g
    }

    /// The single cell described by the `model` and `sampling` sections.
    pub fn model_cell(&self) -> GridCell {
        GridCell {
            name: "model".into(),
            variant: self.model.variant,
            model: self.model.kind,
            sampling: self.sampling.spec(rawlens_core::seed::derive_seed(self.seed, "sampling")),
        }
    }

    pub fn grid_cells(&self) -> Vec<GridCell> {
        let mut cells = self.grid.cells.clone();
        if let Some(kind) = self.grid.sampling_cells {
            cells.extend(rawlens_core::training::sampling_cells(kind, rawlens_core::seed::derive_seed(self.seed, "sampling")));
        }
        cells
    }
}

/// Set `section.key=value` in a parsed document; the value is read as TOML
/// and falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').with_context(|| format!("override {spec:?} is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {spec:?} has an empty key");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = doc;
    for k in parents {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry.as_table_mut().with_context(|| format!("override {spec:?}: {k} is not a section"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// A fully commented configuration with every default spelled out.
pub const EXAMPLE_CONFIG: &str = r#"# rawlens experiment configuration
schema_version = 1
# Root of every derived seed (splits, sampling masks, weights, noise).
seed = 0

[dataset]
# Directory with one folder per class (s<shape>_m<motion>) holding sequence folders of frames.
# root = "data/gestures"
# Or a manifest written by an earlier run (takes precedence over root).
# manifest = "runs/prev/dataset_manifest.json"
layout = "cambridge"        # "cambridge" (Set<k> folders) or "generic" (illum<k> tokens)
min_frames = 8
height = 240                # frames are resized to height x width
width = 320
color = "luma"              # or "first-channel"
clip_len = 8
max_per_sequence = 4
test_fraction = 0.2
val_fraction_of_train = 0.15

[optics]
psf = "caustic"             # "delta", "gaussian", "caustic", or "file"
# psf_path = "psf.tiff"
psf_height = 63
psf_width = 63
psf_sigma = 2.0             # gaussian only
noise_sigma = 0.0           # additive Gaussian read noise
# Sensor crop and convolution plane; default sensor = scene, plane = scene + psf - 1.
# sensor_h = 240
# sensor_w = 320
# pad_h = 302
# pad_w = 382

[sampling]
method = "none"             # "none", "resize", "uniform", "random", "erase"
width = 100
height = 75
keep_fraction = 1.0         # erase only

[model]
kind = "raw3dnet"           # "resnet3d", "raw3dnet", "sfe", "unet_restorer"
variant = "lensless"        # "original", "admm", "unet", "lensless"
reduced = false
# checkpoint = "runs/train/model.ckpt"

[training]
epochs = 100
batch_size = 12
beta1 = 0.9
beta2 = 0.99
weight_decay = 0.001
lr_start = 0.001
lr_end = 0.00001
normalize = true
# max_steps = 200
# stop_at_val_accuracy = 1.0

[recon.admm]
rho_data = 1.0
rho_tv = 1.0
rho_nonneg = 1.0
tv_weight = 0.001
max_iters = 200
primal_tol = 0.001
dual_tol = 0.001
adaptive = false

[recon]
restorer_max_frames = 256

[recon.restorer]
epochs = 20
batch_size = 8

[analysis]
backend = "file"            # "file" or "checkpoint"
# embeddings = "embeddings.csv"
# checkpoint = "runs/sfe/model.ckpt"
# confusion = "runs/eval/confusion.csv"
frame_index = 0
slice = "all"               # "all", "train", "val", "test"
evaluated_classes = [1, 4, 7]
candidate_classes = [1, 4, 7]

[output]
dir = "runs/latest"

[grid]
# sampling_cells = "raw3dnet"
# [[grid.cells]]
# name = "lensless-raw3dnet"
# variant = "lensless"
# model = "raw3dnet"
"#;
