//! Informativeness scores and top-n selection. Higher scores are selected first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::NUM_TAGS;
use crate::error::{Error, Result};
use crate::model::{Analysis, JointModel};
use crate::segmenter::SegOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Rand,
    Lc,
    Mte,
    Mtm,
    Nelp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Rand,
        StrategyKind::Lc,
        StrategyKind::Mte,
        StrategyKind::Mtm,
        StrategyKind::Nelp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Rand => "rand",
            StrategyKind::Lc => "lc",
            StrategyKind::Mte => "mte",
            StrategyKind::Mtm => "mtm",
            StrategyKind::Nelp => "nelp",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (rand, lc, mte, mtm, nelp)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub alpha: f64,
    pub beta: f64,
    /// Seeds the random strategy.
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Nelp,
            alpha: 1.0,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..StrategyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights_ok = self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0;
        if self.kind == StrategyKind::Nelp && !weights_ok {
            return Err(Error::Config(format!(
                "nelp needs non-negative alpha, beta with a positive sum, got {}, {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub sentence_id: usize,
    pub score: f64,
    /// `(normalized_entropy, predicted_loss)` for the `nelp` strategy.
    pub components: Option<(f64, f64)>,
}

fn entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Sum of per-token entropies (nats) over a `len x NUM_TAGS` marginal matrix.
pub fn total_token_entropy(marginals: &[f64]) -> f64 {
    marginals.chunks(NUM_TAGS).map(entropy).sum()
}

/// `MTE / (sqrt(len) * ln N)`, in `[0, sqrt(len)]`.
pub fn normalized_entropy(marginals: &[f64]) -> f64 {
    let len = marginals.len() / NUM_TAGS;
    (total_token_entropy(marginals) / ((len as f64).sqrt() * (NUM_TAGS as f64).ln())).max(0.0)
}

/// `-min_t (top1_t - top2_t)`; smaller margins rank higher.
pub fn min_margin_score(marginals: &[f64]) -> f64 {
    let mut min_margin = f64::INFINITY;
    for row in marginals.chunks(NUM_TAGS) {
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &p in row {
            if p > a {
                b = a;
                a = p;
            } else if p > b {
                b = p;
            }
        }
        min_margin = min_margin.min(a - b);
    }
    -min_margin
}

/// `1 - p(y*|x)` from the Viterbi log probability.
pub fn least_confidence(viterbi_logprob: f64) -> f64 {
    (1.0 - viterbi_logprob.exp()).clamp(0.0, 1.0)
}

pub fn nelp(ne: f64, predicted_loss: f64, alpha: f64, beta: f64) -> f64 {
    alpha * ne + beta * predicted_loss
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded pseudo-random score in `[0, 1)` that depends only on
/// `(seed, sentence_id, round)`, so pool order never matters.
pub fn random_score(seed: u64, sentence_id: usize, round: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ sentence_id as u64) ^ round);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Scores one analyzed sentence. `round` only feeds the random strategy.
pub fn score_analysis(id: usize, a: &Analysis, config: &StrategyConfig, round: u64) -> Result<StrategyScore> {
    score_output(id, &a.seg, a.predicted_loss, config, round)
}

pub fn score_output(
    id: usize,
    seg: &SegOutput,
    predicted_loss: Option<f64>,
    config: &StrategyConfig,
    round: u64,
) -> Result<StrategyScore> {
    let m = &seg.marginals;
    let (score, components) = match config.kind {
        StrategyKind::Rand => (random_score(config.seed, id, round), None),
        StrategyKind::Lc => (least_confidence(seg.viterbi_logprob), None),
        StrategyKind::Mte => (total_token_entropy(m), None),
        StrategyKind::Mtm => (min_margin_score(m), None),
        StrategyKind::Nelp => {
            let ne = normalized_entropy(m);
            let loss = match predicted_loss {
                Some(l) => l,
                None if config.beta == 0.0 => 0.0,
                None => return Err(Error::Config("nelp with beta > 0 needs a loss head".into())),
            };
            (nelp(ne, loss, config.alpha, config.beta), Some((ne, loss)))
        }
    };
    if !score.is_finite() {
        return Err(Error::Contract(format!("non-finite {} score for sentence {id}", config.kind)));
    }
    Ok(StrategyScore {
        sentence_id: id,
        score,
        components,
    })
}

/// Scores every pool sentence with `model`.
pub fn score_pool<'a>(
    model: &JointModel,
    pool: impl IntoIterator<Item = (usize, &'a [char])>,
    config: &StrategyConfig,
    round: u64,
) -> Result<Vec<StrategyScore>> {
    config.validate()?;
    if config.kind == StrategyKind::Nelp && config.beta > 0.0 && !model.has_loss_head() {
        return Err(Error::Config("nelp with beta > 0 needs a loss head".into()));
    }
    pool.into_iter()
        .map(|(id, chars)| {
            if config.kind == StrategyKind::Rand {
                return Ok(StrategyScore {
                    sentence_id: id,
                    score: random_score(config.seed, id, round),
                    components: None,
                });
            }
            score_analysis(id, &model.analyze(chars)?, config, round)
        })
        .collect()
}

/// Ids of the `n` highest scores; ties go to the smaller id.
pub fn select_top_n(scores: &[StrategyScore], n: usize) -> Vec<usize> {
    if scores.is_empty() {
        tracing::warn!("selection from an empty pool");
        return Vec::new();
    }
    let mut sorted: Vec<&StrategyScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sentence_id.cmp(&b.sentence_id)));
    sorted.into_iter().take(n).map(|s| s.sentence_id).collect()
}

/// Comma-separated dump: `id,strategy,score,ne,loss`.
pub fn score_dump(scores: &[StrategyScore], kind: StrategyKind) -> String {
    let mut out = String::from("id,strategy,score,ne,loss\n");
    for s in scores {
        let (ne, loss) = match s.components {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!("{},{},{},{},{}\n", s.sentence_id, kind, s.score, ne, loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(len: usize) -> Vec<f64> {
        vec![0.25; len * NUM_TAGS]
    }

    fn one_hot(len: usize) -> Vec<f64> {
        (0..len).flat_map(|t| {
            let mut r = vec![0.0; NUM_TAGS];
            r[t % NUM_TAGS] = 1.0;
            r
        })
        .collect()
    }

    #[test]
    fn entropy_examples() {
        assert!((total_token_entropy(&uniform(2)) - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((total_token_entropy(&uniform(2)) - 2.7726).abs() < 1e-4);
        assert_eq!(total_token_entropy(&one_hot(3)), 0.0);
        assert!((total_token_entropy(&[0.7, 0.1, 0.1, 0.1]) - 0.9404).abs() < 1e-4);
        assert!((normalized_entropy(&uniform(4)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn margin_examples() {
        assert_eq!(min_margin_score(&one_hot(3)), -1.0);
        let m = [0.6, 0.3, 0.1, 0.0, 0.9, 0.1, 0.0, 0.0];
        assert!((min_margin_score(&m) + 0.3).abs() < 1e-12);
        assert_eq!(min_margin_score(&[0.4, 0.4, 0.2, 0.0]), 0.0);
    }

    #[test]
    fn nelp_examples() {
        assert_eq!(nelp(2.0, 3.5, 1.0, 1.0), 5.5);
        assert_eq!(nelp(normalized_entropy(&one_hot(5)), 0.37, 1.0, 1.0), 0.37);
        assert_eq!(least_confidence(0.0), 0.0);
    }

    #[test]
    fn selection() {
        let s = |id, score| StrategyScore {
            sentence_id: id,
            score,
            components: None,
        };
        let scores = [s(1, 0.9), s(2, 0.1), s(3, 0.9)];
        assert_eq!(select_top_n(&scores, 2), vec![1, 3]);
        assert_eq!(select_top_n(&scores, 10), vec![1, 3, 2]);
        assert!(select_top_n(&[], 3).is_empty());
    }

    #[test]
    fn random_scores_are_seeded() {
        let a: Vec<f64> = (0..50).map(|i| random_score(7, i, 1)).collect();
        let b: Vec<f64> = (0..50).map(|i| random_score(7, i, 1)).collect();
        assert_eq!(a, b);
        assert_ne!(a, (0..50).map(|i| random_score(8, i, 1)).collect::<Vec<_>>());
        assert!(a.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("NELP".parse::<StrategyKind>().unwrap(), StrategyKind::Nelp);
        assert!("qbc".parse::<StrategyKind>().is_err());
        let bad = StrategyConfig {
            alpha: 0.0,
            beta: 0.0,
            ..StrategyConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn marginal_matrix() -> impl Strategy<Value = Vec<f64>> {
        (1usize..12).prop_flat_map(|len| {
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, NUM_TAGS), len).prop_map(|rows| {
                rows.into_iter()
                    .flat_map(|r| {
                        let s: f64 = r.iter().sum::<f64>().max(1e-12);
                        r.into_iter().map(move |x| x / s)
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn ne_bounds(m in marginal_matrix()) {
            let len = m.len() / NUM_TAGS;
            let ne = normalized_entropy(&m);
            prop_assert!(ne >= 0.0 && ne <= (len as f64).sqrt() + 1e-12);
            let ratio = total_token_entropy(&m) / (len as f64).sqrt() / (NUM_TAGS as f64).ln();
            prop_assert!((ne - ratio).abs() < 1e-10);
        }

        #[test]
        fn selection_is_a_function(scores in prop::collection::vec(0.0f64..1.0, 0..40), n in 1usize..50) {
            let s: Vec<StrategyScore> = scores.iter().enumerate()
                .map(|(i, &x)| StrategyScore { sentence_id: i, score: (x * 4.0).round(), components: None })
                .collect();
            let a = select_top_n(&s, n);
            let mut rev = s.clone();
            rev.reverse();
            prop_assert_eq!(&a, &select_top_n(&rev, n));
            prop_assert_eq!(a.len(), n.min(s.len()));
        }
    }
}
