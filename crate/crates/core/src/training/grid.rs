//! Dataset-variant and down-sampling grids: materialize each input variant
//! once, then train and evaluate every cell on it.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{evaluate_model, restore_frames, train_model, train_restorer, Evaluation, InputRange, LabeledClip, TrainConfig};
use crate::clip::{ClipKind, VideoClip};
use crate::dataset::{extract_subvideos, ClipLoader, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::imageio::ColorPolicy;
use crate::models::{ModelKind, ModelSpec};
use crate::optics::{ForwardModel, NoiseSpec};
use crate::recon::{reconstruct_clip, AdmmParams};
use crate::sampling::{downsample_clip, make_mask, SampleMethod, SampleSpec, SamplingMask};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataVariant {
    /// Scene clips as captured by a lensed camera.
    Original,
    /// Lensless measurements reconstructed frame by frame with ADMM.
    Admm,
    /// Lensless measurements restored by a trained U-Net.
    Unet,
    /// Raw lensless measurements.
    Lensless,
}

impl DataVariant {
    fn needs_optics(self) -> bool {
        self != Self::Original
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub name: String,
    pub variant: DataVariant,
    pub model: ModelKind,
    #[serde(default)]
    pub sampling: Option<SampleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Vec<GridCell>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Use the narrow network widths.
    #[serde(default)]
    pub reduced: bool,
    #[serde(default)]
    pub admm: AdmmParams,
    #[serde(default = "default_restorer")]
    pub restorer: TrainConfig,
    /// Cap on training frames used to fit the U-Net restorer.
    #[serde(default = "default_restorer_frames")]
    pub restorer_max_frames: usize,
    /// Gaussian read-noise standard deviation of simulated measurements.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_restorer() -> TrainConfig {
    TrainConfig { epochs: 20, batch_size: 8, normalize: true, ..TrainConfig::default() }
}

fn default_restorer_frames() -> usize {
    256
}

impl GridConfig {
    pub fn new(cells: Vec<GridCell>) -> Self {
        Self {
            cells,
            train: TrainConfig::default(),
            reduced: false,
            admm: AdmmParams::default(),
            restorer: default_restorer(),
            restorer_max_frames: default_restorer_frames(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("grid has no cells".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.cells {
            if !names.insert(&c.name) {
                return Err(Error::Config(format!("duplicate cell name {:?}", c.name)));
            }
            if !c.model.is_classifier() {
                return Err(Error::Config(format!("cell {}: {} is not a classifier", c.name, c.model.label())));
            }
        }
        self.train.validate()?;
        self.restorer.validate()?;
        self.admm.validate()
    }

    pub fn spec(&self, kind: ModelKind, h: usize, w: usize) -> ModelSpec {
        if self.reduced { ModelSpec::reduced(kind, h, w) } else { ModelSpec::standard(kind, h, w) }
    }
}

/// The five down-sampling cells over raw measurements, all near one pixel budget.
pub fn sampling_cells(model: ModelKind, seed: u64) -> Vec<GridCell> {
    let cell = |name: &str, spec: SampleSpec| GridCell {
        name: name.into(),
        variant: DataVariant::Lensless,
        model,
        sampling: Some(spec.with_seed(seed)),
    };
    vec![
        cell("resize-100x75", SampleSpec::new(SampleMethod::Resize, 100, 75)),
        cell("uniform-100x75", SampleSpec::new(SampleMethod::Uniform, 100, 75)),
        cell("random-100x75", SampleSpec::new(SampleMethod::Random, 100, 75)),
        cell("erase-200x150", SampleSpec::erase(200, 150, 0.25)),
        cell("resize-50x37", SampleSpec::new(SampleMethod::Resize, 50, 37)),
    ]
}

/// Scene clips for the three splits, in memory or decoded on demand.
pub enum GridData<'a> {
    Memory {
        train: Vec<LabeledClip>,
        val: Vec<LabeledClip>,
        test: Vec<LabeledClip>,
    },
    Dataset {
        manifest: &'a DatasetManifest,
        height: usize,
        width: usize,
        policy: ColorPolicy,
        clip_len: usize,
        max_per_sequence: usize,
        seed: u64,
    },
}

impl GridData<'_> {
    /// Visit every scene clip of `split` in a fixed order.
    pub fn for_each(&self, split: Split, f: &mut dyn FnMut(LabeledClip) -> Result<()>) -> Result<()> {
        match self {
            GridData::Memory { train, val, test } => {
                let set = match split {
                    Split::Train => train,
                    Split::Val => val,
                    Split::Test => test,
                };
                set.iter().cloned().try_for_each(f)
            }
            GridData::Dataset { manifest, height, width, policy, clip_len, max_per_sequence, seed } => {
                let loader = ClipLoader::new(manifest, *height, *width, *policy);
                for seq in manifest.in_split(split) {
                    for (j, sub) in extract_subvideos(seq, *clip_len, *max_per_sequence, *seed)?.iter().enumerate() {
                        let clip = loader.load(sub)?;
                        f(LabeledClip {
                            id: format!("{}#{j}", seq.id),
                            parent_id: seq.id.clone(),
                            frames: clip.into_frames(),
                            label: seq.class_id,
                            illumination: seq.illumination_id,
                        })?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub variant: DataVariant,
    pub model: ModelKind,
    pub sampling: String,
    pub input_h: usize,
    pub input_w: usize,
    pub pixel_budget: usize,
    pub seed: u64,
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub wall_time_s: f64,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config_digest: String,
    pub rows: Vec<CellResult>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    variant: DataVariant,
    model: &'a str,
    sampling: &'a str,
    input: String,
    pixel_budget: usize,
    seed: u64,
    accuracy: f64,
    correct: usize,
    total: usize,
    best_epoch: usize,
    best_val_accuracy: f64,
}

impl ExperimentReport {
    pub fn row(&self, name: &str) -> Option<&CellResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(CsvRow {
                name: &r.name,
                variant: r.variant,
                model: r.model.label(),
                sampling: &r.sampling,
                input: format!("({},{})", r.input_w, r.input_h),
                pixel_budget: r.pixel_budget,
                seed: r.seed,
                accuracy: r.evaluation.accuracy,
                correct: r.evaluation.correct,
                total: r.evaluation.total,
                best_epoch: r.best_epoch,
                best_val_accuracy: r.best_val_accuracy,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One materialized input set shared by every cell with the same key.
#[derive(Debug, Clone, Default)]
pub struct PreparedData {
    pub train: Vec<LabeledClip>,
    pub val: Vec<LabeledClip>,
    pub test: Vec<LabeledClip>,
    /// Table label of the sampling step, e.g. `Resize (100,75)`.
    pub sampling: String,
    pub pixel_budget: usize,
}

type Key = (DataVariant, Option<String>);

fn key_of(cell: &GridCell) -> Result<Key> {
    Ok((cell.variant, cell.sampling.as_ref().map(serde_json::to_string).transpose()?))
}

struct Transform<'a> {
    variant: DataVariant,
    optics: Option<&'a ForwardModel>,
    admm: AdmmParams,
    noise_sigma: f64,
    seed: u64,
    restorer: Option<(std::cell::RefCell<crate::models::Model>, InputRange)>,
    mask: Option<SamplingMask>,
}

impl Transform<'_> {
    fn raw(&self, clip: &LabeledClip) -> Result<VideoClip> {
        let optics = self.optics.ok_or_else(|| Error::Config("variant needs an optics model".into()))?;
        let scene = VideoClip::new(clip.frames.clone(), ClipKind::Scene, Some(clip.label))?;
        let noise = if self.noise_sigma > 0.0 {
            NoiseSpec::gaussian(self.noise_sigma, derive_seed(self.seed, &format!("noise/{}", clip.id)))
        } else {
            NoiseSpec::none()
        };
        optics.simulate_video(&scene, &noise)
    }

    fn apply(&self, clip: LabeledClip) -> Result<LabeledClip> {
        let frames = match self.variant {
            DataVariant::Original => VideoClip::new(clip.frames.clone(), ClipKind::Scene, None)?,
            DataVariant::Lensless => self.raw(&clip)?,
            DataVariant::Admm => reconstruct_clip(&self.raw(&clip)?, self.optics.expect("checked"), &self.admm)?.0,
            DataVariant::Unet => {
                let (model, range) = self.restorer.as_ref().expect("restorer trained before use");
                let raw = self.raw(&clip)?;
                let out = restore_frames(&mut model.borrow_mut(), raw.frames(), range)?;
                VideoClip::new(out, ClipKind::Reconstructed, None)?
            }
        };
        let frames = match &self.mask {
            Some(mask) => downsample_clip(&frames, mask)?,
            None => frames,
        };
        Ok(LabeledClip { frames: frames.into_frames(), ..clip })
    }
}

fn first_clip(data: &GridData<'_>) -> Result<LabeledClip> {
    let mut first = None;
    let r = data.for_each(Split::Train, &mut |c| {
        first = Some(c);
        Err(Error::Config("stop".into()))
    });
    match (first, r) {
        (Some(c), _) => Ok(c),
        (None, Err(e)) => Err(e),
        (None, Ok(())) => Err(Error::Dataset("train split is empty".into())),
    }
}

fn fit_restorer(
    config: &GridConfig,
    data: &GridData<'_>,
    base: &Transform<'_>,
) -> Result<(crate::models::Model, InputRange)> {
    let mut pairs: Vec<(Array2<f64>, Array2<f64>)> = Vec::new();
    let cap = config.restorer_max_frames.max(1);
    let r = data.for_each(Split::Train, &mut |clip| {
        let raw = base.raw(&clip)?;
        for (i, f) in raw.frames().outer_iter().enumerate() {
            if pairs.len() >= cap {
                return Err(Error::Config("full".into()));
            }
            pairs.push((f.to_owned(), clip.frames.index_axis(ndarray::Axis(0), i).to_owned()));
        }
        Ok(())
    });
    if pairs.len() < cap {
        r?;
    }
    let (h, w) = pairs.first().map(|p| p.0.dim()).ok_or_else(|| Error::Dataset("no restorer frames".into()))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in pairs.iter().flat_map(|p| p.0.iter()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let range = if hi > lo { InputRange { lo, hi } } else { InputRange::identity() };
    let spec = config.spec(ModelKind::UnetRestorer, h, w);
    let restorer_cfg = TrainConfig { seed: derive_seed(config.seed, "restorer"), ..config.restorer.clone() };
    let (model, hist) = train_restorer(&spec, &pairs, &range, &restorer_cfg)?;
    log::info!("restorer trained on {} frames, final mse {:?}", pairs.len(), hist.train_mse.last());
    Ok((model, range))
}

/// Transform the requested splits of `data` into the inputs of `cell`.
pub fn prepare_variant(
    config: &GridConfig,
    data: &GridData<'_>,
    optics: Option<&ForwardModel>,
    cell: &GridCell,
    splits: &[Split],
) -> Result<PreparedData> {
    if cell.variant.needs_optics() && optics.is_none() {
        return Err(Error::Config(format!("cell {}: variant {:?} needs an optics model", cell.name, cell.variant)));
    }
    let mut t = Transform {
        variant: cell.variant,
        optics,
        admm: config.admm,
        noise_sigma: config.noise_sigma,
        seed: config.seed,
        restorer: None,
        mask: None,
    };
    let (_, sh, sw) = first_clip(data)?.frames.dim();
    let probe = match (cell.variant, optics) {
        (DataVariant::Lensless, Some(o)) => o.geometry().sensor_dim(),
        (DataVariant::Unet, Some(o)) => {
            if o.geometry().sensor_dim() != (sh, sw) {
                return Err(Error::Geometry(format!(
                    "cell {}: the restorer needs sensor {:?} equal to scene {:?}",
                    cell.name,
                    o.geometry().sensor_dim(),
                    (sh, sw)
                )));
            }
            let (m, r) = fit_restorer(config, data, &t)?;
            t.restorer = Some((std::cell::RefCell::new(m), r));
            (sh, sw)
        }
        _ => (sh, sw),
    };
    let (sampling, budget) = match &cell.sampling {
        Some(spec) => {
            let mask = make_mask(spec, (probe.1, probe.0))?;
            let budget = mask.valid_pixels();
            t.mask = Some(mask);
            (format!("{} ({},{})", spec.method.label(), spec.target_w, spec.target_h), budget)
        }
        None => ("None".into(), probe.0 * probe.1),
    };
    let mut out = PreparedData { sampling, pixel_budget: budget, ..Default::default() };
    for &split in splits {
        let slot = match split {
            Split::Train => &mut out.train,
            Split::Val => &mut out.val,
            Split::Test => &mut out.test,
        };
        data.for_each(split, &mut |clip| {
            slot.push(t.apply(clip)?);
            Ok(())
        })?;
    }
    Ok(out)
}

fn run_cell(config: &GridConfig, cell: &GridCell, prepared: &PreparedData) -> Result<CellResult> {
    let (train, val, test) = (&prepared.train, &prepared.val, &prepared.test);
    let (_, h, w) = train.first().ok_or_else(|| Error::Dataset("train split is empty".into()))?.frames.dim();
    let spec = config.spec(cell.model, h, w);
    let seed = derive_seed(config.train.seed, &format!("cell/{}", cell.name));
    let tc = TrainConfig { seed, ..config.train.clone() };
    let trained = train_model(&spec, train, val, &tc)?;
    let mut model = trained.model.clone();
    let evaluation = evaluate_model(&mut model, test, &trained.input_range(), tc.batch_size)?;
    log::info!("cell {}: test accuracy {:.4}", cell.name, evaluation.accuracy);
    Ok(CellResult {
        name: cell.name.clone(),
        variant: cell.variant,
        model: cell.model,
        sampling: prepared.sampling.clone(),
        input_h: h,
        input_w: w,
        pixel_budget: prepared.pixel_budget,
        seed,
        train_clips: train.len(),
        val_clips: val.len(),
        test_clips: test.len(),
        best_epoch: trained.history.best_epoch,
        best_val_accuracy: trained.history.best_val_accuracy,
        wall_time_s: trained.history.wall_time_s,
        evaluation,
    })
}

/// Train and evaluate every cell; up to `parallel` cells run at once.
pub fn run_experiment_grid(
    config: &GridConfig,
    data: &GridData<'_>,
    optics: Option<&ForwardModel>,
    parallel: usize,
) -> Result<ExperimentReport> {
    config.validate()?;
    let mut prepared: BTreeMap<Key, PreparedData> = BTreeMap::new();
    for cell in &config.cells {
        let key = key_of(cell)?;
        if let std::collections::btree_map::Entry::Vacant(e) = prepared.entry(key) {
            e.insert(prepare_variant(config, data, optics, cell, &[Split::Train, Split::Val, Split::Test])?);
        }
    }

    let n = config.cells.len();
    let results: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let cell = &config.cells[i];
        let r = key_of(cell).and_then(|k| run_cell(config, cell, &prepared[&k]));
        results.lock().expect("no poisoned workers")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..parallel.clamp(1, n) {
            s.spawn(work);
        }
        work();
    });
    let rows = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        seed: config.seed,
        config_digest: crate::seed::digest_hex(serde_json::to_string(config)?.as_bytes()),
        rows,
    })
}

/// In-memory clip built from rendered frames.
pub fn clip_from_frames(id: &str, frames: &[Array2<f64>], label: u8, illumination: u8) -> LabeledClip {
    let (h, w) = frames[0].dim();
    let mut a = Array3::zeros((frames.len(), h, w));
    for (mut dst, src) in a.outer_iter_mut().zip(frames) {
        dst.assign(src);
    }
    LabeledClip { id: id.into(), parent_id: id.into(), frames: a, label, illumination }
}
