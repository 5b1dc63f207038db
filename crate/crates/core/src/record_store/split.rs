use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("cannot split an empty id list")]
    EmptyInput,
    #[error("duplicate id `{0}` in split input")]
    DuplicateIds(String),
    #[error("split ratios must have a positive total weight")]
    InvalidRatios,
}

/// Integer weights for train/val/test. Each partition receives `weight / total`
/// of the ids; the default 4:1:1 is 2/3, 1/6, 1/6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 4, val: 1, test: 1 }
    }
}

impl SplitRatios {
    fn total(&self) -> u64 {
        u64::from(self.train) + u64::from(self.val) + u64::from(self.test)
    }

    /// Partition sizes for `n` ids: floor for train and val, remainder to test.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), SplitError> {
        let total = self.total();
        if total == 0 {
            return Err(SplitError::InvalidRatios);
        }
        let n64 = n as u64;
        let train = (n64 * u64::from(self.train) / total) as usize;
        let val = (n64 * u64::from(self.val) / total) as usize;
        Ok((train, val, n - train - val))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl DatasetSplit {
    pub fn partition(&self, which: Partition) -> &[String] {
        match which {
            Partition::Train => &self.train_ids,
            Partition::Val => &self.val_ids,
            Partition::Test => &self.test_ids,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Shuffles `ids` with a ChaCha8 stream seeded from `seed`, then cuts the
/// permutation into train/val/test by [`SplitRatios::sizes`].
pub fn split_dataset(
    ids: &[String],
    seed: u64,
    ratios: SplitRatios,
) -> Result<DatasetSplit, SplitError> {
    if ids.is_empty() {
        return Err(SplitError::EmptyInput);
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(SplitError::DuplicateIds(id.clone()));
        }
    }
    let (n_train, n_val, _) = ratios.sizes(ids.len())?;

    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let test_ids = shuffled.split_off(n_train + n_val);
    let val_ids = shuffled.split_off(n_train);
    Ok(DatasetSplit { seed, ratios, train_ids: shuffled, val_ids, test_ids })
}
