//! Classifier and restorer training, evaluation, and experiment grids.

mod eval;
mod grid;

pub use eval::{evaluate_model, predict, score_predictions, ConfusionMatrix, Evaluation, IlluminationAccuracy};
pub use grid::{
    clip_from_frames, prepare_variant, run_experiment_grid, sampling_cells, CellResult, DataVariant, ExperimentReport,
    GridCell, GridConfig, GridData, PreparedData,
};

use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{batch_clips, CheckpointMeta, Model, ModelSpec};
use crate::nn::{argmax, cross_entropy, mse, Adam, AdamConfig, Module, Tensor};
use crate::seed::labeled_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps; the schedule spans the capped total.
    pub max_steps: Option<usize>,
    /// Min-max scale inputs with statistics of the training clips.
    pub normalize: bool,
    /// End training after the first epoch whose validation accuracy reaches this value.
    pub stop_at_val_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 12,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.001,
            lr_start: 1e-3,
            lr_end: 1e-5,
            seed: 0,
            max_steps: None,
            normalize: true,
            stop_at_val_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!("need lr_start ≥ lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay = {} is negative", self.weight_decay));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: 1e-8, weight_decay: self.weight_decay }
    }

    /// Optimizer steps for `n` training items.
    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * n.div_ceil(self.batch_size);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Linear ramp from `lr_start` at step 0 to `lr_end` at `total`.
pub fn lr_at(step: usize, total: usize, config: &TrainConfig) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::InvalidArgument(format!("step {step} outside [0, {total}]")));
    }
    if step == total {
        return Ok(config.lr_end);
    }
    let t = step as f64 / total as f64;
    Ok(config.lr_start + (config.lr_end - config.lr_start) * t)
}

/// One labeled clip held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub parent_id: String,
    pub frames: Array3<f64>,
    pub label: u8,
    pub illumination: u8,
}

/// Min-max scaling fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub lo: f64,
    pub hi: f64,
}

impl InputRange {
    pub fn identity() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn fit(clips: &[LabeledClip]) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in clips.iter().flat_map(|c| c.frames.iter()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument("cannot fit an input range on empty or non-finite data".into()));
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        Ok(Self { lo, hi })
    }

    pub fn apply(&self, t: &mut Tensor) {
        let s = 1.0 / (self.hi - self.lo);
        t.data_mut().iter_mut().for_each(|v| *v = (*v - self.lo) * s);
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }

    pub fn from_array([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

/// Batch tensor of the clips at `idx`, scaled by `range`.
pub(crate) fn make_batch(clips: &[LabeledClip], idx: &[usize], range: &InputRange) -> Tensor {
    let mut t = batch_clips(idx.iter().map(|&i| clips[i].frames.view()));
    range.apply(&mut t);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    /// Fraction of training items predicted correctly during the epoch's updates.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub wall_time_s: f64,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// The best model of a run with its history and checkpoint metadata.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub history: TrainHistory,
    pub meta: CheckpointMeta,
}

impl Trained {
    pub fn input_range(&self) -> InputRange {
        self.meta.input_range.map_or(InputRange::identity(), InputRange::from_array)
    }
}

fn check_clips(spec: &ModelSpec, clips: &[LabeledClip], what: &str) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Dataset(format!("{what} set is empty")));
    }
    let want = (spec.clip_len, spec.height, spec.width);
    if let Some(c) = clips.iter().find(|c| c.frames.dim() != want) {
        return Err(Error::Geometry(format!(
            "{what} clip {} is {:?}, model expects {want:?}",
            c.id,
            c.frames.dim()
        )));
    }
    if let Some(c) = clips.iter().find(|c| c.frames.iter().any(|v| !v.is_finite())) {
        return Err(Error::Dataset(format!("{what} clip {} contains non-finite values", c.id)));
    }
    if let Some(c) = clips.iter().find(|c| usize::from(c.label) >= spec.num_classes) {
        return Err(Error::Dataset(format!("{what} clip {} has label {} ≥ {}", c.id, c.label, spec.num_classes)));
    }
    Ok(())
}

/// Train a classifier with cross-entropy and keep the best-validation model.
pub fn train_model(
    spec: &ModelSpec,
    train: &[LabeledClip],
    val: &[LabeledClip],
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    if !spec.kind.is_classifier() {
        return Err(Error::InvalidArgument(format!("{} is not a classifier", spec.kind.label())));
    }
    check_clips(spec, train, "train")?;
    check_clips(spec, val, "val")?;
    let range = if config.normalize { InputRange::fit(train)? } else { InputRange::identity() };
    let start = Instant::now();
    let mut model = Model::new(spec.clone(), labeled_rng_seed(config.seed, "model"))?;
    let mut opt = Adam::new(config.adam());
    let total = config.total_steps(train.len());
    let mut step = 0;
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 0..config.epochs {
        if step >= total {
            break;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut labeled_rng(config.seed, &format!("epoch/{epoch}")));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        let mut lr = config.lr_start;
        for idx in order.chunks(config.batch_size) {
            if step >= total {
                break;
            }
            let x = make_batch(train, idx, &range);
            let labels: Vec<usize> = idx.iter().map(|&i| usize::from(train[i].label)).collect();
            model.zero_grad();
            let logits = model.forward(&x, true)?;
            let (loss, g) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    epoch,
                    detail: format!("loss {loss} on clips {:?}", idx.iter().map(|&i| &train[i].id).collect::<Vec<_>>()),
                });
            }
            for (b, &l) in labels.iter().enumerate() {
                correct += usize::from(argmax(logits.item(b)) == l);
            }
            seen += labels.len();
            loss_sum += loss * labels.len() as f64;
            model.backward(&g);
            lr = lr_at(step, total, config)?;
            opt.step(model.params_mut(), lr);
            step += 1;
        }
        let val_accuracy = evaluate_model(&mut model, val, &range, config.batch_size)?.accuracy;
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val acc {val_accuracy:.3}",
            loss_sum / seen as f64,
            correct as f64 / seen as f64
        );
        epochs.push(EpochRecord {
            epoch,
            steps: step,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_accuracy,
            lr,
        });
        if best.as_ref().is_none_or(|(_, a, _)| val_accuracy > *a) {
            best = Some((epoch, val_accuracy, model.clone()));
        }
        if config.stop_at_val_accuracy.is_some_and(|t| val_accuracy >= t) {
            break;
        }
    }

    let (best_epoch, best_val_accuracy, model) = best.expect("at least one epoch runs");
    Ok(Trained {
        model,
        history: TrainHistory { epochs, best_epoch, best_val_accuracy, wall_time_s: start.elapsed().as_secs_f64() },
        meta: CheckpointMeta {
            config_digest: config_digest(spec, config)?,
            best_val_accuracy: Some(best_val_accuracy),
            best_epoch: Some(best_epoch),
            input_range: Some(range.as_array()),
        },
    })
}

fn labeled_rng_seed(seed: u64, label: &str) -> u64 {
    crate::seed::derive_seed(seed, label)
}

pub fn config_digest(spec: &ModelSpec, config: &TrainConfig) -> Result<String> {
    let text = serde_json::to_string(&(spec, config))?;
    Ok(crate::seed::digest_hex(text.as_bytes()))
}

/// Per-epoch mean squared error of a restorer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorerHistory {
    pub train_mse: Vec<f64>,
    pub steps: usize,
}

/// Train a frame restorer on `(input, target)` frame pairs with MSE.
///
/// Inputs and targets are `[H, W]` arrays; inputs are scaled by `range`.
pub fn train_restorer(
    spec: &ModelSpec,
    pairs: &[(ndarray::Array2<f64>, ndarray::Array2<f64>)],
    range: &InputRange,
    config: &TrainConfig,
) -> Result<(Model, RestorerHistory)> {
    config.validate()?;
    if spec.kind.is_classifier() {
        return Err(Error::InvalidArgument("restorers map frames to frames".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let dim = (spec.height, spec.width);
    if let Some((a, b)) = pairs.iter().find(|(a, b)| a.dim() != dim || b.dim() != dim) {
        return Err(Error::Geometry(format!("pair {:?}/{:?} does not match {dim:?}", a.dim(), b.dim())));
    }
    let mut model = Model::new(spec.clone(), labeled_rng_seed(config.seed, "restorer"))?;
    let mut opt = Adam::new(config.adam());
    let total = config.total_steps(pairs.len());
    let stack = |idx: &[usize], input: bool| -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * dim.0 * dim.1);
        for &i in idx {
            let a = if input { &pairs[i].0 } else { &pairs[i].1 };
            data.extend(a.iter().copied());
        }
        Tensor::from_vec([idx.len(), 1, 1, dim.0, dim.1], data)
    };
    let mut step = 0;
    let mut train_mse = Vec::new();
    for epoch in 0..config.epochs {
        if step >= total {
            break;
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut labeled_rng(config.seed, &format!("restorer-epoch/{epoch}")));
        let (mut sum, mut n) = (0.0, 0);
        for idx in order.chunks(config.batch_size) {
            if step >= total {
                break;
            }
            let mut x = stack(idx, true);
            range.apply(&mut x);
            let y = stack(idx, false);
            model.zero_grad();
            let out = model.forward(&x, true)?;
            let (loss, g) = mse(&out, &y);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, epoch, detail: format!("restorer loss {loss}") });
            }
            sum += loss * idx.len() as f64;
            n += idx.len();
            model.backward(&g);
            opt.step(model.params_mut(), lr_at(step, total, config)?);
            step += 1;
        }
        train_mse.push(sum / n as f64);
    }
    Ok((model, RestorerHistory { train_mse, steps: step }))
}

/// Eval-mode restoration of each frame of `frames`, clamped to [0, 1].
pub fn restore_frames(model: &mut Model, frames: &Array3<f64>, range: &InputRange) -> Result<Array3<f64>> {
    let (l, h, w) = frames.dim();
    let mut x = Tensor::from_vec([l, 1, 1, h, w], frames.iter().copied().collect());
    range.apply(&mut x);
    let y = model.forward(&x, false)?;
    Ok(Array3::from_shape_vec((l, h, w), y.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("restorer preserves shape"))
}
