use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, ReviewRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Split tag per original index.
    pub fn assignment(&self, n: usize) -> Vec<Split> {
        let mut tags = vec![Split::Train; n];
        for &i in &self.validation {
            tags[i] = Split::Validation;
        }
        for &i in &self.test {
            tags[i] = Split::Test;
        }
        tags
    }
}

/// Seeded random partition of `0..n` by `(train, validation, test)` ratios.
/// Sizes are `round(n·train)`, `round(n·validation)` and the remainder.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndices, CorpusError> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = (n as f64 * ratios[1]).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(CorpusError::TooFewRecords { records: n, ratios });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, validation, test })
}

/// Record-level convenience over [`split_indices`].
pub fn split_dataset(
    records: &[ReviewRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>, Vec<ReviewRecord>), CorpusError> {
    let idx = split_indices(records.len(), ratios, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx.train), pick(&idx.validation), pick(&idx.test)))
}
