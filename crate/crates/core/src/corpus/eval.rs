use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TagSeq;
use crate::error::{Error, Result};

/// Word-span precision, recall and F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_words: usize,
    pub predicted_words: usize,
    pub correct_words: usize,
}

impl SegmentationEval {
    pub fn from_counts(gold_words: usize, predicted_words: usize, correct_words: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(correct_words, predicted_words);
        let recall = ratio(correct_words, gold_words);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SegmentationEval {
            precision,
            recall,
            f1,
            gold_words,
            predicted_words,
            correct_words,
        }
    }
}

impl fmt::Display for SegmentationEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "precision: {:.4}", self.precision)?;
        writeln!(f, "recall: {:.4}", self.recall)?;
        writeln!(f, "f1: {:.4}", self.f1)?;
        writeln!(f, "gold_words: {}", self.gold_words)?;
        writeln!(f, "predicted_words: {}", self.predicted_words)?;
        write!(f, "correct_words: {}", self.correct_words)
    }
}

/// Compares gold and predicted segmentations as sets of character spans.
pub fn evaluate_f1(gold: &[TagSeq], predicted: &[TagSeq]) -> Result<SegmentationEval> {
    if gold.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} gold sequences but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("empty corpus".into()));
    }
    let (mut n_gold, mut n_pred, mut n_correct) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Contract(format!(
                "sentence {i}: gold length {} != predicted length {}",
                g.len(),
                p.len()
            )));
        }
        let gold_spans: HashSet<(usize, usize)> = g.spans().into_iter().collect();
        let pred_spans = p.spans();
        n_gold += gold_spans.len();
        n_pred += pred_spans.len();
        n_correct += pred_spans.iter().filter(|s| gold_spans.contains(s)).count();
    }
    Ok(SegmentationEval::from_counts(n_gold, n_pred, n_correct))
}
