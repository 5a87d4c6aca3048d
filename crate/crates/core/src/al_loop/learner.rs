use std::path::Path;

use crate::corpus::LabeledSentence;
use crate::error::Result;
use crate::features::Vocab;
use crate::model::{evaluate, train, Analysis, EvalReport, JointModel, ModelConfig, TrainConfig};
use crate::tensor::Tensor;

/// Fits, evaluates and persists the models the loop works with.
pub trait Learner {
    type Model;

    /// Trains on `labeled`; `warm` is the previous round's model when warm starting.
    fn fit(&self, labeled: &[LabeledSentence], seed: u64, warm: Option<&Self::Model>) -> Result<Self::Model>;
    fn evaluate(&self, model: &Self::Model, data: &[LabeledSentence]) -> Result<EvalReport>;
    fn analyze(&self, model: &Self::Model, chars: &[char]) -> Result<Analysis>;
    fn save(&self, model: &Self::Model, dir: &Path) -> Result<()>;
    fn load(&self, dir: &Path) -> Result<Self::Model>;
}

/// BiLSTM-CRF segmenter with the loss-prediction head, over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct JointLearner {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vocab,
    pub pretrained_ngrams: Option<Tensor>,
}

impl Learner for JointLearner {
    type Model = JointModel;

    fn fit(&self, labeled: &[LabeledSentence], seed: u64, warm: Option<&JointModel>) -> Result<JointModel> {
        let mut m = match warm {
            Some(w) => w.clone(),
            None => JointModel::new(self.model.clone(), self.vocab.clone(), self.pretrained_ngrams.as_ref(), seed)?,
        };
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        train(&mut m, labeled, &cfg)?;
        Ok(m)
    }

    fn evaluate(&self, model: &JointModel, data: &[LabeledSentence]) -> Result<EvalReport> {
        evaluate(model, data)
    }

    fn analyze(&self, model: &JointModel, chars: &[char]) -> Result<Analysis> {
        model.analyze(chars)
    }

    fn save(&self, model: &JointModel, dir: &Path) -> Result<()> {
        model.save(dir)
    }

    fn load(&self, dir: &Path) -> Result<JointModel> {
        JointModel::load(dir)
    }
}
