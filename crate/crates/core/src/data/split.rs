use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, TrajectorySample};
use crate::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Sample,
    /// Keeps every sample of a vehicle on the same side.
    Vehicle,
}

/// Disjoint train/test sample ids, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test split of `samples` by their `sample_id`.
pub fn split(samples: &[TrajectorySample], test_fraction: f64, seed: u64, mode: SplitMode) -> Result<Split, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Precondition(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let n = samples.len();
    let target = (n as f64 * test_fraction).round() as usize;
    let target = if n >= 2 { target.clamp(1, n - 1) } else { target.min(n) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut test = match mode {
        SplitMode::Sample => {
            let mut ids: Vec<usize> = samples.iter().map(|s| s.sample_id).collect();
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            ids.truncate(target);
            ids
        }
        SplitMode::Vehicle => {
            let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for s in samples {
                groups.entry(s.vehicle_id).or_default().push(s.sample_id);
            }
            let mut vehicles: Vec<i64> = groups.keys().copied().collect();
            vehicles.shuffle(&mut rng);
            let mut ids = Vec::new();
            for v in vehicles {
                if ids.len() >= target {
                    break;
                }
                ids.extend_from_slice(&groups[&v]);
            }
            ids
        }
    };
    test.sort_unstable();
    let mut train: Vec<usize> = samples
        .iter()
        .map(|s| s.sample_id)
        .filter(|id| test.binary_search(id).is_err())
        .collect();
    train.sort_unstable();
    Ok(Split { train, test })
}

/// One resampled training set, numbered from 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSet {
    pub index: usize,
    /// Multiset of training sample ids, same size as the training set.
    pub sample_ids: Vec<usize>,
    pub rng_seed: u64,
}

impl BootstrapSet {
    pub fn unique_fraction(&self) -> f64 {
        let mut ids = self.sample_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len() as f64 / self.sample_ids.len().max(1) as f64
    }
}

/// Draws `n_sets` same-size resamples of `train` with replacement.
pub fn bootstrap(train: &[usize], n_sets: usize, seed: u64) -> Result<Vec<BootstrapSet>, DataError> {
    if train.is_empty() {
        return Err(DataError::Precondition("empty training set".into()));
    }
    if n_sets == 0 {
        return Err(DataError::Precondition("at least one bootstrap set required".into()));
    }
    Ok((1..=n_sets)
        .map(|index| {
            let rng_seed = derive_seed(seed, index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let sample_ids = (0..train.len())
                .map(|_| train[rng.random_range(0..train.len())])
                .collect();
            BootstrapSet {
                index,
                sample_ids,
                rng_seed,
            }
        })
        .collect())
}
