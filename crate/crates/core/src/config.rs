//! Run configuration: one TOML document whose tables mirror the pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::al_loop::{AlConfig, JointLearner};
use crate::corpus::{
    enforce_max_len, read_labeled_corpus, split_dataset, DatasetSplit, LabeledSentence, SplitRatios, DEFAULT_MAX_LEN,
};
use crate::error::{Error, Result};
use crate::features::{SkipGramConfig, VocabConfig};
use crate::model::{prepare_features, ModelConfig, TrainConfig};
use crate::strategies::StrategyConfig;
use crate::synth::{generate, SynthConfig};
use crate::tensor::AdamConfig;

/// Epochs per round when n-gram features are on, and when they are off.
pub const EPOCHS_WITH_NGRAMS: usize = 30;
pub const EPOCHS_WITHOUT_NGRAMS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Segmented corpus, one sentence per line with space-separated words.
    /// When absent a synthetic corpus is generated from `synth`.
    pub path: Option<PathBuf>,
    pub max_len: usize,
    pub synth: SynthConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: None,
            max_len: DEFAULT_MAX_LEN,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
    pub labeled_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitSection {
            train: r.train,
            test: r.test,
            validation: r.validation,
            labeled_fraction: 0.3,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            test: self.test,
            validation: self.validation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Defaults to 30 with n-gram features and 50 without.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: None,
            batch_size: t.batch_size,
            lambda: t.lambda,
            lr: t.adam.lr,
            clip_norm: t.adam.clip_norm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Pretrains n-gram embeddings with skip-gram before the first round.
    pub pretrain: bool,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_char_freq: usize,
    pub min_ngram_freq: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let s = SkipGramConfig::default();
        let v = VocabConfig::default();
        FeatureSection {
            pretrain: true,
            window: s.window,
            negatives: s.negatives,
            epochs: s.epochs,
            lr: s.lr,
            min_char_freq: v.min_char_freq,
            min_ngram_freq: v.min_ngram_freq,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Reveals the corpus segmentation.
    #[default]
    Gold,
    /// Waits for annotators through the HTTP API.
    Human,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
    /// How long a round waits for human labels before going on with what arrived.
    pub deadline_secs: u64,
    /// How long a task handed out by `/batch` stays reserved for its poller.
    pub lease_secs: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            kind: OracleKind::Gold,
            deadline_secs: 3600,
            lease_secs: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlSection {
    pub iterations: usize,
    pub batch: usize,
    pub warm_start: bool,
    pub workers: usize,
}

impl Default for AlSection {
    fn default() -> Self {
        let a = AlConfig::default();
        AlSection {
            iterations: a.iterations,
            batch: a.batch,
            warm_start: a.warm_start,
            workers: a.workers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub port: u16,
}

impl Default for ServiceSection {
    fn default() -> Self {
        ServiceSection { port: 8080 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds for the split and model initialization; comparisons use all of them,
    /// single runs the first.
    pub seeds: Vec<u64>,
    pub corpus: CorpusSection,
    pub split: SplitSection,
    pub strategy: StrategyConfig,
    pub al: AlSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub features: FeatureSection,
    pub oracle: OracleSection,
    pub service: ServiceSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.max_len == 0 {
            return Err(Error::Config("corpus.max_len must be positive".into()));
        }
        self.split.ratios().validate()?;
        if !(self.split.labeled_fraction > 0.0 && self.split.labeled_fraction < 1.0) {
            return Err(Error::Config("split.labeled_fraction must be in (0, 1)".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.oracle.lease_secs == 0 {
            return Err(Error::Config("oracle.lease_secs must be positive".into()));
        }
        self.model.validate()?;
        self.train_config(0).validate()?;
        self.al_config(0).validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![0]
        } else {
            self.seeds.clone()
        }
    }

    pub fn epochs(&self) -> usize {
        self.train.epochs.unwrap_or(if self.model.ngram_order.is_some() {
            EPOCHS_WITH_NGRAMS
        } else {
            EPOCHS_WITHOUT_NGRAMS
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.train.batch_size,
            lambda: self.train.lambda,
            adam: AdamConfig {
                lr: self.train.lr,
                clip_norm: self.train.clip_norm,
                ..AdamConfig::default()
            },
            seed,
        }
    }

    pub fn al_config(&self, seed: u64) -> AlConfig {
        AlConfig {
            iterations: self.al.iterations,
            batch: self.al.batch,
            strategy: self.strategy,
            warm_start: self.al.warm_start,
            seed,
            workers: self.al.workers,
        }
    }

    /// Reads (or generates) the corpus and applies the length limit.
    pub fn load_corpus(&self) -> Result<Vec<LabeledSentence>> {
        let raw = match &self.corpus.path {
            Some(p) => read_labeled_corpus(p)?,
            None => generate(&self.corpus.synth)?,
        };
        let mut next_id = raw.len();
        Ok(raw
            .into_iter()
            .flat_map(|s| enforce_max_len(s, self.corpus.max_len, &mut next_id))
            .collect())
    }

    pub fn split(&self, corpus: &[LabeledSentence], seed: u64) -> Result<DatasetSplit> {
        split_dataset(corpus, self.split.ratios(), self.split.labeled_fraction, seed)
    }

    /// Vocabulary and pretrained n-gram table over the whole corpus, wrapped as a learner.
    pub fn learner(&self, corpus: &[LabeledSentence]) -> Result<JointLearner> {
        let chars: Vec<&[char]> = corpus.iter().map(|s| s.sentence.chars.as_slice()).collect();
        let f = &self.features;
        let skipgram = SkipGramConfig {
            dim: self.model.ngram_dim,
            window: f.window,
            negatives: f.negatives,
            epochs: f.epochs,
            lr: f.lr,
            seed: self.seeds()[0],
        };
        let vocab_config = VocabConfig {
            min_char_freq: f.min_char_freq,
            min_ngram_freq: f.min_ngram_freq,
        };
        let (vocab, table) = prepare_features(&self.model, &chars, vocab_config, f.pretrain.then_some(&skipgram))?;
        Ok(JointLearner {
            model: self.model.clone(),
            train: self.train_config(0),
            vocab,
            pretrained_ngrams: table,
        })
    }

    /// Makes a relative corpus path absolute so a snapshot stays usable from elsewhere.
    pub fn absolutize(&mut self, base: &Path) {
        if let Some(p) = &self.corpus.path {
            if p.is_relative() {
                self.corpus.path = Some(base.join(p));
            }
        }
    }
}
