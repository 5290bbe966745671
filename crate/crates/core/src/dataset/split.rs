use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::seed::labeled_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            val_fraction_of_train: 0.15,
            seed: 0,
        }
    }
}

/// Stratified train/val/test assignment.
///
/// Within each class the sorted ids are shuffled by a class-labeled seed;
/// the first `max(1, round(n · test))` go to test, then
/// `max(1, round(pool · val))` of the remaining pool go to val. A class must
/// keep at least one training sequence.
pub fn split_dataset(manifest: &DatasetManifest, config: &SplitConfig) -> Result<DatasetManifest> {
    for (name, f) in [
        ("test_fraction", config.test_fraction),
        ("val_fraction_of_train", config.val_fraction_of_train),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} = {f} outside (0, 1)")));
        }
    }
    let mut by_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for s in &manifest.sequences {
        by_class.entry(s.class_id).or_default().push(&s.id);
    }
    let mut assignment = BTreeMap::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.shuffle(&mut labeled_rng(config.seed, &format!("split/class{class}")));
        let n = ids.len();
        let n_test = ((n as f64 * config.test_fraction).round() as usize).max(1);
        let pool = n.saturating_sub(n_test);
        let n_val = ((pool as f64 * config.val_fraction_of_train).round() as usize).max(1);
        if pool <= n_val {
            return Err(Error::Dataset(format!(
                "class {class} has {n} sequences; at least one each for test, val and train is required"
            )));
        }
        for (k, id) in ids.into_iter().enumerate() {
            let split = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            assignment.insert(id.to_string(), split);
        }
    }
    Ok(DatasetManifest {
        split_assignment: assignment,
        seed: config.seed,
        ..manifest.clone()
    })
}
