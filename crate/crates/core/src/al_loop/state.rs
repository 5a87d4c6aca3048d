use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, TagSeq};
use crate::error::{Error, Result};

pub const STATE_FORMAT: &str = "nelp-al-state";
pub const STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_size: usize,
    pub test_nll: f64,
    pub test_f1: f64,
    /// Wall time of the round, including scoring and retraining.
    pub seconds: f64,
    pub selected: Vec<usize>,
    /// Requested sentences still without a label after the oracle returned.
    pub shortfall: usize,
}

impl IterationRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        IterationRecord { seconds: 0.0, ..self.clone() } == IterationRecord { seconds: 0.0, ..other.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub iteration: usize,
    pub test_nll: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    PoolExhausted,
}

/// Everything needed to continue a run, apart from the model checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlState {
    pub format: String,
    pub version: u32,
    /// Last completed round; 0 is the initial model.
    pub iteration: usize,
    pub labeled: BTreeSet<usize>,
    pub unlabeled: BTreeSet<usize>,
    /// Selected but not yet labeled.
    pub awaiting: BTreeSet<usize>,
    /// Labels that came from the oracle, by sentence id.
    pub labels: BTreeMap<usize, TagSeq>,
    pub history: Vec<IterationRecord>,
    pub best: BestModel,
    pub stop: Option<StopReason>,
}

impl AlState {
    pub(super) fn new(split: &DatasetSplit) -> Self {
        AlState {
            format: STATE_FORMAT.into(),
            version: STATE_VERSION,
            iteration: 0,
            labeled: split.labeled.iter().copied().collect(),
            unlabeled: split.unlabeled.iter().copied().collect(),
            awaiting: BTreeSet::new(),
            labels: BTreeMap::new(),
            history: Vec::new(),
            best: BestModel {
                iteration: 0,
                test_nll: f64::INFINITY,
            },
            stop: None,
        }
    }

    pub(super) fn record(&mut self, r: IterationRecord) {
        self.iteration = r.iteration;
        if r.test_nll < self.best.test_nll || self.history.is_empty() {
            self.best = BestModel {
                iteration: r.iteration,
                test_nll: r.test_nll,
            };
        }
        self.history.push(r);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: AlState = serde_json::from_str(text)?;
        if s.format != STATE_FORMAT || s.version != STATE_VERSION {
            return Err(Error::Format(format!(
                "unsupported state file {} v{}",
                s.format, s.version
            )));
        }
        Ok(s)
    }

    /// Checks that the three id sets partition the training split.
    pub fn check(&self, split: &DatasetSplit) -> Result<()> {
        let all: BTreeSet<usize> = split.training.iter().map(|s| s.id()).collect();
        let n = self.labeled.len() + self.unlabeled.len() + self.awaiting.len();
        let union: BTreeSet<usize> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.awaiting)
            .copied()
            .collect();
        if union != all || n != all.len() {
            return Err(Error::Format("state does not partition the training split".into()));
        }
        if self.history.len() != self.iteration + 1 {
            return Err(Error::Format("state history length does not match its iteration".into()));
        }
        Ok(())
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("iteration,train_size,test_nll,test_f1,seconds,shortfall\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{:.3},{}\n",
                r.iteration, r.train_size, r.test_nll, r.test_f1, r.seconds, r.shortfall
            ));
        }
        out
    }
}
