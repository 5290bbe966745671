//! Embedding-space clustering analysis and shape/motion error attribution.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{factor_class, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::Tensor;
use crate::resample::resize_bilinear;
use crate::training::ConfusionMatrix;

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A deterministic image → vector mapping.
pub trait EmbeddingBackend {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embed one image identified by `id`; file backends look up by id.
    fn embed(&mut self, id: &str, image: Option<&Array2<f64>>) -> Result<Vec<f64>>;
}

/// Vectors read from a CSV (`id,v0,v1,…`) or JSON (`{"id": [v0, …]}`) file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    name: String,
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingFile {
    pub fn from_map(name: impl Into<String>, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding file holds no vectors".into()));
        }
        if let Some((id, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::InvalidArgument(format!("vector {id} has length {}, expected {dim}", v.len())));
        }
        Ok(Self { name: name.into(), dim, vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let vectors = if is_json {
            serde_json::from_str::<BTreeMap<String, Vec<f64>>>(&text)?
        } else {
            let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
            let mut map = BTreeMap::new();
            for (line, rec) in r.records().enumerate() {
                let rec = rec?;
                let mut fields = rec.iter();
                let id = fields.next().unwrap_or_default().trim().to_string();
                let parsed: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
                match parsed {
                    Ok(v) => {
                        map.insert(id, v);
                    }
                    // A non-numeric first row is a header.
                    Err(_) if line == 0 => {}
                    Err(e) => {
                        return Err(Error::Decode { path: path.into(), message: format!("row {}: {e}", line + 1) })
                    }
                }
            }
            map
        };
        Self::from_map(path.display().to_string(), vectors)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

impl EmbeddingBackend for EmbeddingFile {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, id: &str, _image: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        self.vectors.get(id).cloned().ok_or_else(|| Error::Dataset(format!("no embedding for {id}")))
    }
}

/// Pooled deepest-level features of a per-frame encoder-decoder.
#[derive(Debug, Clone)]
pub struct CheckpointEmbedder {
    name: String,
    model: Model,
}

impl CheckpointEmbedder {
    pub fn new(name: impl Into<String>, model: Model) -> Result<Self> {
        if model.spec().kind.is_classifier() {
            return Err(Error::InvalidArgument("embedding checkpoints must be per-frame encoder-decoders".into()));
        }
        Ok(Self { name: name.into(), model })
    }
}

impl EmbeddingBackend for CheckpointEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        *self.model.spec().encoder_widths.last().expect("validated widths")
    }

    fn embed(&mut self, id: &str, image: Option<&Array2<f64>>) -> Result<Vec<f64>> {
        let image = image.ok_or_else(|| Error::InvalidArgument(format!("{}: image {id} not supplied", self.name)))?;
        let (h, w) = (self.model.spec().height, self.model.spec().width);
        let frame = if image.dim() == (h, w) { image.clone() } else { resize_bilinear(image.view(), (h, w)) };
        let x = Tensor::from_vec([1, 1, 1, h, w], frame.into_iter().collect());
        Ok(self.model.embed(&x)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PertinenceRow {
    pub evaluated_class: u8,
    pub candidates: Vec<u8>,
    pub counts: Vec<usize>,
}

/// For every image of `evaluated`, the candidate class with the highest mean
/// cosine similarity to it; its own class excludes the image itself.
///
/// Ties go to the lowest class index.
pub fn pertinence_counts(
    by_class: &BTreeMap<u8, Vec<Vec<f64>>>,
    evaluated: u8,
    candidates: &[u8],
) -> Result<PertinenceRow> {
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() {
        return Err(Error::InvalidArgument("no candidate classes".into()));
    }
    let get = |c: u8| by_class.get(&c).filter(|v| !v.is_empty()).ok_or_else(|| Error::Dataset(format!("class {c} has no images")));
    let own = get(evaluated)?;
    if cands.contains(&evaluated) && own.len() < 2 {
        return Err(Error::Dataset(format!("class {evaluated} needs at least 2 images for leave-one-out")));
    }
    let mut counts = vec![0; cands.len()];
    for (i, q) in own.iter().enumerate() {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, &c) in cands.iter().enumerate() {
            let set = get(c)?;
            let (mut sum, mut n) = (0.0, 0);
            for (j, v) in set.iter().enumerate() {
                if c == evaluated && j == i {
                    continue;
                }
                sum += cosine_similarity(q, v)?;
                n += 1;
            }
            let avg = sum / n as f64;
            if avg > best.1 {
                best = (k, avg);
            }
        }
        counts[best.0] += 1;
    }
    Ok(PertinenceRow { evaluated_class: evaluated, candidates: cands, counts })
}

/// Mean pairwise cosine similarity between classes (leave-one-out on the diagonal).
pub fn class_similarity(by_class: &BTreeMap<u8, Vec<Vec<f64>>>) -> Result<BTreeMap<(u8, u8), f64>> {
    let mut out = BTreeMap::new();
    for (&a, va) in by_class {
        for (&b, vb) in by_class {
            let (mut sum, mut n) = (0.0, 0usize);
            for (i, x) in va.iter().enumerate() {
                for (j, y) in vb.iter().enumerate() {
                    if a == b && i == j {
                        continue;
                    }
                    sum += cosine_similarity(x, y)?;
                    n += 1;
                }
            }
            if n > 0 {
                out.insert((a, b), sum / n as f64);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PertinenceTable {
    pub backend: String,
    pub rows: Vec<PertinenceRow>,
}

impl PertinenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class");
        if let Some(r) = self.rows.first() {
            for c in &r.candidates {
                s.push_str(&format!(",class {c}"));
            }
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("class {}", r.evaluated_class));
            for n in &r.counts {
                s.push_str(&format!(",{n}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Off-diagonal confusion mass split by which factor of the class was wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAttribution {
    pub shape: u64,
    pub motion: u64,
    pub both: u64,
}

impl ErrorAttribution {
    pub fn total(&self) -> u64 {
        self.shape + self.motion + self.both
    }
}

pub fn error_attribution(confusion: &ConfusionMatrix) -> Result<ErrorAttribution> {
    let m = &confusion.counts;
    if m.len() != NUM_CLASSES || m.iter().any(|r| r.len() != NUM_CLASSES) {
        return Err(Error::InvalidArgument(format!("confusion matrix must be {NUM_CLASSES}×{NUM_CLASSES}")));
    }
    let mut out = ErrorAttribution::default();
    for (t, row) in m.iter().enumerate() {
        let (ts, tm) = factor_class(t as u8);
        for (p, &n) in row.iter().enumerate() {
            if t == p {
                continue;
            }
            let (ps, pm) = factor_class(p as u8);
            match (ts != ps, tm != pm) {
                (true, false) => out.shape += n,
                (false, true) => out.motion += n,
                _ => out.both += n,
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, ModelSpec};
    use crate::seed::labeled_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cosine_closed_forms() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    /// Noisy points around orthogonal axes, one axis per class.
    pub(crate) fn separable(classes: &[u8], per_class: usize, dim: usize, seed: u64) -> BTreeMap<u8, Vec<Vec<f64>>> {
        let mut r = labeled_rng(seed, "separable");
        classes
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let pts = (0..per_class)
                    .map(|_| {
                        (0..dim)
                            .map(|d| if d == k { 1.0 + r.random_range(0.0..0.2) } else { r.random_range(0.0..0.15) })
                            .collect()
                    })
                    .collect();
                (c, pts)
            })
            .collect()
    }

    #[test]
    fn separable_clusters_are_diagonal() {
        let data = separable(&[0, 1, 2], 12, 512, 1);
        for c in 0..3u8 {
            let row = pertinence_counts(&data, c, &[0, 1, 2]).unwrap();
            let mut want = vec![0; 3];
            want[c as usize] = 12;
            assert_eq!(row.counts, want);
        }
        let sim = class_similarity(&data).unwrap();
        for a in 0..3u8 {
            for b in 0..3u8 {
                if a != b {
                    assert!(sim[&(a, a)] > sim[&(a, b)]);
                }
            }
        }
    }

    #[test]
    fn ties_go_to_the_lowest_class_and_small_classes_error() {
        let mut data = BTreeMap::new();
        data.insert(0u8, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        data.insert(1u8, vec![vec![1.0, 0.0]]);
        let row = pertinence_counts(&data, 0, &[1, 0]).unwrap();
        assert_eq!(row.candidates, vec![0, 1]);
        assert_eq!(row.counts, vec![2, 0]);
        assert!(pertinence_counts(&data, 1, &[0, 1]).is_err());
        assert!(pertinence_counts(&data, 1, &[0]).is_ok());
    }

    #[test]
    fn attribution_examples() {
        let mut m = ConfusionMatrix::default();
        for i in 0..9 {
            m.add(i, i);
        }
        assert_eq!(error_attribution(&m).unwrap(), ErrorAttribution::default());
        m.add(1, 4);
        assert_eq!(error_attribution(&m).unwrap(), ErrorAttribution { shape: 1, motion: 0, both: 0 });
        m.add(0, 2);
        m.add(0, 4);
        assert_eq!(error_attribution(&m).unwrap(), ErrorAttribution { shape: 1, motion: 1, both: 1 });
        let bad = ConfusionMatrix { counts: vec![vec![0; 8]; 9] };
        assert!(error_attribution(&bad).is_err());
    }

    /// Cell-by-cell oracle working on raw indices.
    pub(crate) fn attribution_oracle(m: &[Vec<u64>]) -> (u64, u64, u64) {
        let (mut s, mut mo, mut b) = (0, 0, 0);
        for t in 0..9 {
            for p in 0..9 {
                if t == p {
                    continue;
                }
                let same_shape = t / 3 == p / 3;
                let same_motion = t % 3 == p % 3;
                if !same_shape && same_motion {
                    s += m[t][p];
                } else if same_shape && !same_motion {
                    mo += m[t][p];
                } else {
                    b += m[t][p];
                }
            }
        }
        (s, mo, b)
    }

    proptest! {
        #[test]
        fn attribution_matches_oracle_and_partitions(cells in prop::collection::vec(0u64..50, 81)) {
            let counts: Vec<Vec<u64>> = cells.chunks(9).map(|c| c.to_vec()).collect();
            let m = ConfusionMatrix::from_counts(counts.clone()).unwrap();
            let a = error_attribution(&m).unwrap();
            prop_assert_eq!((a.shape, a.motion, a.both), attribution_oracle(&counts));
            prop_assert_eq!(a.total(), m.total() - m.trace());
        }

        #[test]
        fn pertinence_is_scale_invariant_and_partitions(scale in 0.01f64..100.0, seed in 0u64..1000) {
            let mut r = labeled_rng(seed, "pert");
            let data: BTreeMap<u8, Vec<Vec<f64>>> = (0..3u8)
                .map(|c| (c, (0..4).map(|_| (0..6).map(|_| r.random_range(0.01..1.0)).collect()).collect()))
                .collect();
            let scaled: BTreeMap<u8, Vec<Vec<f64>>> = data
                .iter()
                .map(|(&c, v)| (c, v.iter().map(|x| x.iter().map(|y| y * scale).collect()).collect()))
                .collect();
            for c in 0..3u8 {
                let a = pertinence_counts(&data, c, &[0, 1, 2]).unwrap();
                let b = pertinence_counts(&scaled, c, &[0, 1, 2]).unwrap();
                prop_assert_eq!(a.counts.iter().sum::<usize>(), 4);
                prop_assert_eq!(a.counts, b.counts);
            }
        }
    }

    #[test]
    fn embedding_files_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("e.csv");
        std::fs::write(&csv, "id,a,b\nx,1,0\ny,0.5,2\n").unwrap();
        let mut f = EmbeddingFile::load(&csv).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.embed("y", None).unwrap(), vec![0.5, 2.0]);
        assert!(f.embed("z", None).is_err());

        let json = dir.path().join("e.json");
        std::fs::write(&json, r#"{"x": [1, 2, 3], "y": [0, 0, 1]}"#).unwrap();
        let f = EmbeddingFile::load(&json).unwrap();
        assert_eq!(f.ids().collect::<Vec<_>>(), ["x", "y"]);

        std::fs::write(&json, r#"{"x": [1, 2, 3], "y": [0, 1]}"#).unwrap();
        assert!(EmbeddingFile::load(&json).is_err());
    }

    #[test]
    fn checkpoint_embedder_is_deterministic() {
        let m = Model::new(ModelSpec::reduced(ModelKind::Sfe, 16, 16), 0).unwrap();
        let mut e = CheckpointEmbedder::new("sfe", m).unwrap();
        assert_eq!(e.dim(), 8);
        let img = Array2::from_shape_fn((32, 32), |(i, j)| ((i * j) % 7) as f64 / 7.0);
        let a = e.embed("a", Some(&img)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, e.embed("a", Some(&img)).unwrap());
        assert!(e.embed("a", None).is_err());
        let clf = Model::new(ModelSpec::reduced(ModelKind::Resnet3d, 16, 16), 0).unwrap();
        assert!(CheckpointEmbedder::new("r", clf).is_err());
    }
}
