use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            test: 0.2,
            validation: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.validation];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r) || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios out of range: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        if self.train <= 0.0 || self.test <= 0.0 {
            return Err(Error::Config("train and test ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Train/test/validation partition, with the training part further divided
/// into an initially labeled set and an unlabeled pool (both as sentence ids).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub training: Vec<LabeledSentence>,
    pub testing: Vec<LabeledSentence>,
    pub validation: Vec<LabeledSentence>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl DatasetSplit {
    pub fn training_by_id(&self, id: usize) -> Option<&LabeledSentence> {
        // training is sorted by id
        self.training
            .binary_search_by_key(&id, |s| s.id())
            .ok()
            .map(|i| &self.training[i])
    }

    pub fn labeled_sentences(&self) -> Vec<&LabeledSentence> {
        self.labeled
            .iter()
            .filter_map(|&id| self.training_by_id(id))
            .collect()
    }

    pub fn unlabeled_sentences(&self) -> Vec<&LabeledSentence> {
        self.unlabeled
            .iter()
            .filter_map(|&id| self.training_by_id(id))
            .collect()
    }
}

pub const MIN_CORPUS_SIZE: usize = 10;

/// Shuffles `corpus` with `seed` and cuts it by `ratios`; the training part is
/// then divided into labeled/unlabeled by `labeled_fraction`.
pub fn split_dataset(
    corpus: &[LabeledSentence],
    ratios: SplitRatios,
    labeled_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    if !(labeled_fraction > 0.0 && labeled_fraction < 1.0) {
        return Err(Error::Config(format!(
            "labeled fraction must be in (0, 1), got {labeled_fraction}"
        )));
    }
    if corpus.len() < MIN_CORPUS_SIZE {
        return Err(Error::Contract(format!(
            "corpus has {} sentences, need at least {MIN_CORPUS_SIZE}",
            corpus.len()
        )));
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    if let Some(dup) = corpus.iter().find(|s| !seen.insert(s.id())) {
        return Err(Error::Contract(format!("duplicate sentence id {}", dup.id())));
    }

    let n = corpus.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let n_train = ((n as f64 * ratios.train).round() as usize).clamp(2, n - 1);
    let n_test = ((n as f64 * ratios.test).round() as usize).clamp(1, n - n_train);
    let take = |idx: &[usize]| -> Vec<LabeledSentence> {
        let mut v: Vec<LabeledSentence> = idx.iter().map(|&i| corpus[i].clone()).collect();
        v.sort_by_key(|s| s.id());
        v
    };
    let training = take(&order[..n_train]);
    let testing = take(&order[n_train..n_train + n_test]);
    let validation = take(&order[n_train + n_test..]);

    let n_labeled = ((n_train as f64 * labeled_fraction).round() as usize).clamp(1, n_train - 1);
    let mut train_ids: Vec<usize> = order[..n_train].iter().map(|&i| corpus[i].id()).collect();
    // second shuffle so the labeled subset does not depend on the test cut
    train_ids.shuffle(&mut rng);
    let mut labeled = train_ids[..n_labeled].to_vec();
    let mut unlabeled = train_ids[n_labeled..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();

    Ok(DatasetSplit {
        training,
        testing,
        validation,
        labeled,
        unlabeled,
    })
}
