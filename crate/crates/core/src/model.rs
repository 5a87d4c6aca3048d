//! The joint segmenter + loss-prediction model, its trainer and evaluation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{evaluate_f1, LabeledSentence, SegmentationEval, TagSeq, NUM_TAGS};
use crate::error::{Error, Result};
use crate::features::{ngram_features, Vocab};
use crate::loss_head::{joint_loss_var, loss_head_loss_var, predict_loss, LossHeadParams, LossHeadVars};
use crate::segmenter::{crf_nll_var, decode, BiLstm, BiLstmVars, CrfMode, SegOutput, NUM_STATES};
use crate::tensor::{Adam, AdamConfig, ParamId, ParamSet, Tape, Tensor, Var};

pub const MODEL_FORMAT: &str = "nelp-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub char_dim: usize,
    pub ngram_dim: usize,
    /// `None` disables n-gram features; written as `"off"` in config files.
    #[serde(with = "ngram_order_repr")]
    pub ngram_order: Option<usize>,
    /// Hidden units per direction.
    pub hidden: usize,
    pub d_k: usize,
    pub dropout: f64,
    pub crf_mode: CrfMode,
    /// Builds the loss-prediction head.
    pub loss_head: bool,
    /// Stops head gradients at the encoder output.
    pub freeze_encoder_for_head: bool,
}

mod ngram_order_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(n) => s.serialize_u64(*n as u64),
            None => s.serialize_str("off"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Order(usize),
        Word(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Order(n) => Ok(Some(n)),
            Repr::Word(w) if w == "off" => Ok(None),
            Repr::Word(w) => w
                .parse()
                .map(Some)
                .map_err(|_| de::Error::custom(format!("n-gram order must be \"off\", 2, 3 or 4, got {w:?}"))),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_dim: 128,
            ngram_dim: 128,
            ngram_order: Some(2),
            hidden: 256,
            d_k: 64,
            dropout: 0.2,
            crf_mode: CrfMode::Constrained,
            loss_head: true,
            freeze_encoder_for_head: false,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for single-core experiments.
    pub fn desk() -> Self {
        ModelConfig {
            char_dim: 16,
            ngram_dim: 16,
            hidden: 24,
            d_k: 16,
            ..ModelConfig::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        self.char_dim + if self.ngram_order.is_some() { self.ngram_dim } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0 || self.hidden == 0 || self.d_k == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if let Some(order) = self.ngram_order {
            if !crate::features::NGRAM_ORDERS.contains(&order) {
                return Err(Error::Config(format!("n-gram order must be 2, 3 or 4, got {order}")));
            }
            if self.ngram_dim == 0 {
                return Err(Error::Config("ngram_dim must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Vocabulary ids for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Features {
    pub chars: Vec<usize>,
    pub ngrams: Option<Vec<usize>>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    char_emb: ParamId,
    ngram_emb: Option<ParamId>,
    bilstm: BiLstm,
    em_w: ParamId,
    em_b: ParamId,
    trans: ParamId,
    head: Option<LossHeadParams>,
}

struct Bound {
    bilstm: BiLstmVars,
    em_w: Var,
    em_b: Var,
    trans: Var,
    head: Option<LossHeadVars>,
}

/// Model output for one unlabeled sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub seg: SegOutput,
    pub predicted_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    config: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct JointModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    ids: Ids,
}

impl JointModel {
    /// Fresh parameters from `seed`. Segmenter parameters are drawn before head
    /// parameters, so the segmenter initialization does not depend on `config.loss_head`.
    pub fn new(config: ModelConfig, vocab: Vocab, pretrained_ngrams: Option<&Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let char_emb = params.add_embedding(
            "embeddings.char",
            Tensor::uniform(&[vocab.chars.len(), config.char_dim], 0.1, &mut rng),
        );
        let ngram_emb = match config.ngram_order {
            None => None,
            Some(_) => {
                let table = match pretrained_ngrams {
                    Some(t) => {
                        if t.shape() != [vocab.ngrams.len(), config.ngram_dim] {
                            return Err(Error::Config(format!(
                                "pretrained n-gram table is {:?}, expected [{}, {}]",
                                t.shape(),
                                vocab.ngrams.len(),
                                config.ngram_dim
                            )));
                        }
                        t.clone()
                    }
                    None => Tensor::uniform(&[vocab.ngrams.len(), config.ngram_dim], 0.1, &mut rng),
                };
                Some(params.add_embedding("embeddings.ngram", table))
            }
        };
        let bilstm = BiLstm::register(&mut params, config.input_dim(), config.hidden, &mut rng);
        let em_w = params.add("crf.emission.w", Tensor::xavier(2 * config.hidden, NUM_TAGS, &mut rng));
        let em_b = params.add("crf.emission.b", Tensor::zeros(&[1, NUM_TAGS]));
        let trans = params.add("crf.transitions", Tensor::zeros(&[NUM_STATES, NUM_STATES]));
        let head = config
            .loss_head
            .then(|| LossHeadParams::register(&mut params, 2 * config.hidden, config.d_k, &mut rng));
        Ok(JointModel {
            config,
            vocab,
            params,
            ids: Ids {
                char_emb,
                ngram_emb,
                bilstm,
                em_w,
                em_b,
                trans,
                head,
            },
        })
    }

    fn locate(config: &ModelConfig, params: &ParamSet) -> Result<Ids> {
        let need = |name: &str| params.id(name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")));
        Ok(Ids {
            char_emb: need("embeddings.char")?,
            ngram_emb: match config.ngram_order {
                Some(_) => Some(need("embeddings.ngram")?),
                None => None,
            },
            bilstm: BiLstm::find(params).ok_or_else(|| Error::Format("checkpoint lacks bilstm parameters".into()))?,
            em_w: need("crf.emission.w")?,
            em_b: need("crf.emission.b")?,
            trans: need("crf.transitions")?,
            head: match config.loss_head {
                true => Some(
                    LossHeadParams::find(params)
                        .ok_or_else(|| Error::Format("checkpoint lacks loss_head parameters".into()))?,
                ),
                false => None,
            },
        })
    }

    pub fn has_loss_head(&self) -> bool {
        self.ids.head.is_some()
    }

    pub fn features(&self, chars: &[char]) -> Features {
        Features {
            chars: self.vocab.char_ids(chars),
            ngrams: self
                .config
                .ngram_order
                .map(|k| self.vocab.ngram_ids(chars, k).expect("order validated")),
        }
    }

    /// Ids of the head parameters, empty without a head.
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.ids.head.map(|h| h.ids().to_vec()).unwrap_or_default()
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            bilstm: self.ids.bilstm.bind(tape, &self.params),
            em_w: tape.param(&self.params, self.ids.em_w),
            em_b: tape.param(&self.params, self.ids.em_b),
            trans: tape.param(&self.params, self.ids.trans),
            head: self.ids.head.map(|h| h.bind(tape, &self.params)),
        }
    }

    /// Encoder states and emission scores.
    fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, b: &Bound, f: &Features, train: bool, rng: &mut R) -> (Var, Var) {
        let c = tape.gather(&self.params, self.ids.char_emb, &f.chars);
        let x = match (self.ids.ngram_emb, &f.ngrams) {
            (Some(id), Some(ng)) => {
                let g = tape.gather(&self.params, id, ng);
                tape.concat_cols(&[c, g])
            }
            _ => c,
        };
        let h = b.bilstm.encode(tape, x, self.config.dropout, train, rng);
        let em = tape.matmul(h, b.em_w);
        let em = tape.add_row(em, b.em_b);
        (h, em)
    }

    fn head_prediction(&self, tape: &mut Tape, b: &Bound, h: Var) -> Option<Var> {
        let head = b.head.as_ref()?;
        let input = if self.config.freeze_encoder_for_head { tape.detach(h) } else { h };
        Some(predict_loss(tape, head, input, None))
    }

    /// Records the joint loss of a batch on `tape`. The head regresses the
    /// batch's own NLL values, taken as constants.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &[(&Features, &TagSeq)],
        lambda: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<BatchLoss> {
        self.batch_loss_with_targets(tape, batch, lambda, None, train, rng)
    }

    /// Like [`JointModel::batch_loss`] with explicit head targets.
    pub fn batch_loss_with_targets<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &[(&Features, &TagSeq)],
        lambda: f64,
        head_targets: Option<&[f64]>,
        train: bool,
        rng: &mut R,
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let b = self.bind(tape);
        let mut nlls = Vec::with_capacity(batch.len());
        let mut preds = Vec::new();
        for (f, gold) in batch {
            let (h, em) = self.forward(tape, &b, f, train, rng);
            nlls.push(crf_nll_var(tape, em, b.trans, gold, self.config.crf_mode)?);
            if let Some(p) = self.head_prediction(tape, &b, h) {
                preds.push(p);
            }
        }
        let seg_nll: Vec<f64> = nlls.iter().map(|&v| tape.scalar(v)).collect();
        let (head, predicted) = if preds.is_empty() {
            (None, Vec::new())
        } else {
            let stacked = tape.concat_rows(&preds);
            let predicted = tape.value(stacked).data().to_vec();
            let targets = head_targets.unwrap_or(&seg_nll);
            (Some(loss_head_loss_var(tape, stacked, targets)?), predicted)
        };
        let head_loss = head.map(|h| tape.scalar(h));
        let joint = joint_loss_var(tape, &nlls, head, lambda);
        Ok(BatchLoss {
            joint,
            seg_nll,
            predicted,
            head_loss,
        })
    }

    /// Decoding, marginals and predicted loss, without dropout.
    pub fn analyze(&self, chars: &[char]) -> Result<Analysis> {
        let f = self.features(chars);
        self.analyze_features(&f)
    }

    pub fn analyze_features(&self, f: &Features) -> Result<Analysis> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, em) = self.forward(&mut tape, &b, f, false, &mut rng);
        let predicted_loss = self.head_prediction(&mut tape, &b, h).map(|p| tape.scalar(p));
        let seg = decode(tape.value(em).data(), self.params.get(self.ids.trans).data(), self.config.crf_mode)?;
        Ok(Analysis { seg, predicted_loss })
    }

    pub fn predict(&self, chars: &[char]) -> Result<TagSeq> {
        Ok(self.analyze(chars)?.seg.viterbi_tags)
    }

    /// Segmentation NLL of a labeled sentence, without dropout.
    pub fn sentence_nll(&self, s: &LabeledSentence) -> Result<f64> {
        let f = self.features(&s.sentence.chars);
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, em) = self.forward(&mut tape, &b, &f, false, &mut rng);
        let v = crf_nll_var(&mut tape, em, b.trans, &s.tags, self.config.crf_mode)?;
        Ok(tape.scalar(v))
    }

    /// Writes `model.json`, `params.json` and the vocabularies into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
        };
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&path, e))?;
        self.params.save(dir.join("params.json"))?;
        self.vocab.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: ModelHeader = serde_json::from_str(&text)?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model {} v{}",
                path.display(),
                header.format,
                header.version
            )));
        }
        header.config.validate()?;
        let params = ParamSet::load(dir.join("params.json"))?;
        let vocab = Vocab::load(dir)?;
        let ids = Self::locate(&header.config, &params)?;
        Ok(JointModel {
            config: header.config,
            vocab,
            params,
            ids,
        })
    }
}

/// A recorded batch objective plus the values that went into it.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub joint: Var,
    pub seg_nll: Vec<f64>,
    pub predicted: Vec<f64>,
    pub head_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the loss-prediction term.
    pub lambda: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lambda: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_nll: f64,
    pub mean_head_loss: Option<f64>,
}

/// Mini-batch Adam over `data`, reshuffled every epoch.
pub fn train(model: &mut JointModel, data: &[LabeledSentence], config: &TrainConfig) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("no training data".into()));
    }
    let feats: Vec<Features> = data.iter().map(|s| model.features(&s.sentence.chars)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut nll_sum, mut head_sum, mut head_n) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Features, &TagSeq)> = chunk.iter().map(|&i| (&feats[i], &data[i].tags)).collect();
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &batch, config.lambda, true, &mut rng)?;
            model.params.zero_grad();
            tape.backward(loss.joint, &mut model.params)?;
            adam.step(&mut model.params)?;
            nll_sum += loss.seg_nll.iter().sum::<f64>();
            if let Some(h) = loss.head_loss {
                head_sum += h * chunk.len() as f64;
                head_n += chunk.len();
            }
        }
        let s = EpochStats {
            epoch,
            mean_nll: nll_sum / data.len() as f64,
            mean_head_loss: (head_n > 0).then(|| head_sum / head_n as f64),
        };
        tracing::debug!(epoch, mean_nll = s.mean_nll, "epoch done");
        stats.push(s);
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval: SegmentationEval,
    /// Mean per-sentence segmentation NLL.
    pub mean_nll: f64,
}

pub fn evaluate(model: &JointModel, data: &[LabeledSentence]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::UndefinedMetric("evaluation on an empty corpus".into()));
    }
    let mut gold = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    let mut nll = 0.0;
    for s in data {
        pred.push(model.predict(&s.sentence.chars)?);
        gold.push(s.tags.clone());
        nll += model.sentence_nll(s)?;
    }
    Ok(EvalReport {
        eval: evaluate_f1(&gold, &pred)?,
        mean_nll: nll / data.len() as f64,
    })
}

/// Builds the vocabulary over `sentences` and, when n-grams are on, pretrains their table.
pub fn prepare_features(
    config: &ModelConfig,
    sentences: &[&[char]],
    vocab_config: crate::features::VocabConfig,
    skipgram: Option<&crate::features::SkipGramConfig>,
) -> Result<(Vocab, Option<Tensor>)> {
    let vocab = Vocab::build(sentences.iter().copied(), config.ngram_order, vocab_config)?;
    let table = match (config.ngram_order, skipgram) {
        (Some(order), Some(sg)) => {
            let seqs = sentences
                .iter()
                .map(|s| {
                    Ok(ngram_features(s, order)?
                        .iter()
                        .map(|g| vocab.ngrams.id(g))
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = crate::features::SkipGramConfig {
                dim: config.ngram_dim,
                ..*sg
            };
            Some(crate::features::train_skipgram(&seqs, vocab.ngrams.len(), &cfg)?.table)
        }
        _ => None,
    };
    Ok((vocab, table))
}
