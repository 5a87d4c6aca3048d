//! Skip-gram with negative sampling over token-id sequences.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::PAD;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards zero over all updates.
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 128,
            window: 2,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramOutput {
    /// Center-word vectors, `vocab_size x dim`; row 0 (padding) is zero.
    pub table: Tensor,
    pub epoch_losses: Vec<f64>,
}

/// `(center, context)` pairs with the context within `window` positions.
pub fn skipgram_pairs(seq: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &center) in seq.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(seq.len());
        for (j, &ctx) in seq.iter().enumerate().take(hi).skip(lo) {
            if j != i {
                pairs.push((center, ctx));
            }
        }
    }
    pairs
}

fn log_sigmoid(x: f64) -> f64 {
    -crate::tensor::softplus(-x)
}

pub fn train_skipgram(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipGramConfig,
) -> Result<SkipGramOutput> {
    if vocab_size < 2 {
        return Err(Error::Contract(format!("vocabulary of size {vocab_size} is too small")));
    }
    if config.dim == 0 || config.epochs == 0 || config.window == 0 {
        return Err(Error::Config("skip-gram dim, window and epochs must be positive".into()));
    }
    let mut counts = vec![0usize; vocab_size];
    for seq in sequences {
        for &t in seq {
            if t >= vocab_size {
                return Err(Error::Contract(format!("token id {t} outside vocabulary")));
            }
            counts[t] += 1;
        }
    }
    let total_tokens: usize = counts.iter().sum();
    if total_tokens == 0 {
        return Err(Error::Contract("empty skip-gram corpus".into()));
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::Contract(format!("noise distribution: {e}")))?;

    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut center: Vec<f64> = (0..vocab_size * d)
        .map(|_| (rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    center[PAD * d..(PAD + 1) * d].iter_mut().for_each(|x| *x = 0.0);
    let mut context = vec![0.0; vocab_size * d];

    let pairs_per_epoch: usize = sequences
        .iter()
        .map(|s| skipgram_pairs(s, config.window).len())
        .sum();
    let total_updates = (pairs_per_epoch * config.epochs).max(1);
    let mut done = 0usize;
    let mut grad_center = vec![0.0; d];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for &si in &order {
            for (c, o) in skipgram_pairs(&sequences[si], config.window) {
                let lr = config.lr * (1.0 - done as f64 / total_updates as f64).max(1e-4);
                done += 1;
                grad_center.iter_mut().for_each(|g| *g = 0.0);
                let targets = std::iter::once((o, 1.0))
                    .chain((0..config.negatives).map(|_| (noise.sample(&mut rng), 0.0)));
                for (t, label) in targets {
                    if label == 0.0 && t == o {
                        continue;
                    }
                    let cv = &center[c * d..(c + 1) * d];
                    let xv = &mut context[t * d..(t + 1) * d];
                    let score: f64 = cv.iter().zip(xv.iter()).map(|(a, b)| a * b).sum();
                    loss_sum -= if label == 1.0 { log_sigmoid(score) } else { log_sigmoid(-score) };
                    // d(loss)/d(score) = sigmoid(score) - label
                    let g = crate::tensor::sigmoid(score) - label;
                    for k in 0..d {
                        grad_center[k] += g * xv[k];
                        xv[k] -= lr * g * cv[k];
                    }
                }
                if c != PAD {
                    let cv = &mut center[c * d..(c + 1) * d];
                    for k in 0..d {
                        cv[k] -= lr * grad_center[k];
                    }
                }
                n += 1;
            }
        }
        epoch_losses.push(if n > 0 { loss_sum / n as f64 } else { 0.0 });
    }

    Ok(SkipGramOutput {
        table: Tensor::matrix(vocab_size, d, center),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(t: &Tensor, a: usize, b: usize) -> f64 {
        let (x, y) = (t.row_slice(a), t.row_slice(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (nx * ny)
    }

    #[test]
    fn pair_enumeration() {
        let mut p = skipgram_pairs(&[10, 11, 12], 1);
        p.sort();
        assert_eq!(p, vec![(10, 11), (11, 10), (11, 12), (12, 11)]);
        assert!(skipgram_pairs(&[5], 2).is_empty());
    }

    // Two clusters of ids that never share a sequence: {3..=6} and {7..=10}.
    fn two_cluster_corpus(seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..300)
            .map(|i| {
                let base = if i % 2 == 0 { 3 } else { 7 };
                (0..8).map(|_| base + rng.gen_range(0..4)).collect()
            })
            .collect()
    }

    #[test]
    fn co_occurring_tokens_end_up_closer() {
        let corpus = two_cluster_corpus(1);
        let cfg = SkipGramConfig {
            dim: 16,
            seed: 3,
            ..SkipGramConfig::default()
        };
        let out = train_skipgram(&corpus, 11, &cfg).unwrap();
        assert_eq!(out.table.shape(), &[11, 16]);
        let (p, q, r) = (3, 4, 8);
        assert!(cosine(&out.table, p, q) > cosine(&out.table, p, r));
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
        assert!(out.table.row_slice(PAD).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn default_dimension_and_determinism() {
        let corpus = two_cluster_corpus(2);
        let cfg = SkipGramConfig {
            epochs: 1,
            ..SkipGramConfig::default()
        };
        let a = train_skipgram(&corpus, 11, &cfg).unwrap();
        let b = train_skipgram(&corpus, 11, &cfg).unwrap();
        assert_eq!(a.table.shape(), &[11, 128]);
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn refuses_tiny_vocab() {
        assert!(train_skipgram(&[vec![0]], 1, &SkipGramConfig::default()).is_err());
        assert!(train_skipgram(&[vec![0, 5]], 3, &SkipGramConfig::default()).is_err());
    }
}
