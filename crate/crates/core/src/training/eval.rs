use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{make_batch, InputRange, LabeledClip};
use crate::dataset::{NUM_CLASSES, NUM_ILLUMINATIONS};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::argmax;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self { counts: vec![vec![0; NUM_CLASSES]; NUM_CLASSES] }
    }
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != NUM_CLASSES || counts.iter().any(|r| r.len() != NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!("confusion matrix must be {NUM_CLASSES}×{NUM_CLASSES}")));
        }
        Ok(Self { counts })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 { 0.0 } else { self.trace() as f64 / t as f64 }
    }

    /// CSV with a `true\pred` corner, class columns, and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for j in 0..NUM_CLASSES {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationAccuracy {
    pub illumination: u8,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: ConfusionMatrix,
    pub per_illumination: Vec<IlluminationAccuracy>,
    pub predictions: Vec<usize>,
}

/// Accuracy, confusion, and per-illumination breakdown of fixed predictions.
pub fn score_predictions(labels: &[usize], predictions: &[usize], illuminations: &[u8]) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::Dataset("cannot score an empty stream".into()));
    }
    if labels.len() != predictions.len() || labels.len() != illuminations.len() {
        return Err(Error::InvalidArgument("labels, predictions, and illuminations differ in length".into()));
    }
    let mut confusion = ConfusionMatrix::default();
    let mut per = vec![(0usize, 0usize); NUM_ILLUMINATIONS as usize];
    for ((&t, &p), &il) in labels.iter().zip(predictions).zip(illuminations) {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("class out of range: true {t}, predicted {p}")));
        }
        confusion.add(t, p);
        let slot = per
            .get_mut(usize::from(il))
            .ok_or_else(|| Error::InvalidArgument(format!("illumination {il} out of range")))?;
        slot.0 += usize::from(t == p);
        slot.1 += 1;
    }
    let correct = confusion.trace() as usize;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        correct,
        total: labels.len(),
        confusion,
        per_illumination: per
            .into_iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(i, (c, n))| IlluminationAccuracy {
                illumination: i as u8,
                correct: c,
                total: n,
                accuracy: c as f64 / n as f64,
            })
            .collect(),
        predictions: predictions.to_vec(),
    })
}

/// Eval-mode class predictions in stream order.
pub fn predict(model: &mut Model, clips: &[LabeledClip], range: &InputRange, batch: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..clips.len()).collect();
    let mut out = Vec::with_capacity(clips.len());
    for chunk in idx.chunks(batch.max(1)) {
        let logits = model.forward(&make_batch(clips, chunk, range), false)?;
        out.extend((0..chunk.len()).map(|b| argmax(logits.item(b))));
    }
    Ok(out)
}

pub fn evaluate_model(model: &mut Model, clips: &[LabeledClip], range: &InputRange, batch: usize) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty stream".into()));
    }
    let predictions = predict(model, clips, range, batch)?;
    let labels: Vec<usize> = clips.iter().map(|c| usize::from(c.label)).collect();
    let illum: Vec<u8> = clips.iter().map(|c| c.illumination).collect();
    score_predictions(&labels, &predictions, &illum)
}
