//! Vocabularies, n-gram features, skip-gram pretraining and the concatenated
//! character + n-gram input representation.

mod skipgram;
mod vocab;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use skipgram::{skipgram_pairs, train_skipgram, SkipGramConfig, SkipGramOutput};
pub use vocab::{TokenIndex, Vocab, VocabConfig, BOS, PAD, RESERVED, UNK};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pads positions before the sentence start inside n-gram tokens.
pub const BOS_CHAR: char = '\u{2}';

pub const NGRAM_ORDERS: [usize; 3] = [2, 3, 4];

/// One n-gram per character: token `t` is characters `t-order+1 ..= t`,
/// left-padded with [`BOS_CHAR`].
pub fn ngram_features(s: &[char], order: usize) -> Result<Vec<String>> {
    if !NGRAM_ORDERS.contains(&order) {
        return Err(Error::Config(format!("n-gram order must be 2, 3 or 4, got {order}")));
    }
    Ok((0..s.len())
        .map(|t| {
            (0..order)
                .map(|k| {
                    let back = order - 1 - k;
                    if back > t {
                        BOS_CHAR
                    } else {
                        s[t - back]
                    }
                })
                .collect()
        })
        .collect())
}

/// Concatenated lookup: row `t` is `char_table[chars[t]]` followed by
/// `ngram_table[ngrams[t]]` when n-grams are used.
pub fn embed(
    char_ids: &[usize],
    char_table: &Tensor,
    ngrams: Option<(&[usize], &Tensor)>,
) -> Tensor {
    let dc = char_table.cols();
    let dn = ngrams.map_or(0, |(_, t)| t.cols());
    if let Some((ids, _)) = ngrams {
        assert_eq!(ids.len(), char_ids.len(), "contract violation: feature lengths differ");
    }
    let mut data = Vec::with_capacity(char_ids.len() * (dc + dn));
    for (t, &c) in char_ids.iter().enumerate() {
        data.extend_from_slice(char_table.row_slice(c));
        if let Some((ids, table)) = ngrams {
            data.extend_from_slice(table.row_slice(ids[t]));
        }
    }
    Tensor::matrix(char_ids.len(), dc + dn, data)
}

/// Writes `vocab_size d` followed by one space-separated row per token.
pub fn save_embeddings(path: impl AsRef<Path>, table: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{} {}", table.rows(), table.cols()).expect("write to Vec");
    for r in 0..table.rows() {
        let row: Vec<String> = table.row_slice(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(" ")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty embedding file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad(format!("bad header {header:?}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad(format!("bad header {header:?}")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for x in line.split_whitespace() {
            data.push(x.parse::<f64>().map_err(|_| bad(format!("row {i}: bad value {x:?}")))?);
        }
        if data.len() - before != cols {
            return Err(bad(format!("row {i} has {} values, expected {cols}", data.len() - before)));
        }
    }
    if data.len() != rows * cols {
        return Err(bad(format!("expected {rows} rows")));
    }
    Ok(Tensor::matrix(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn ngram_examples() {
        assert_eq!(ngram_features(&chars("abc"), 2).unwrap(), vec!["\u{2}a", "ab", "bc"]);
        assert_eq!(ngram_features(&chars("a"), 2).unwrap(), vec!["\u{2}a"]);
        assert_eq!(
            ngram_features(&chars("abc"), 3).unwrap(),
            vec!["\u{2}\u{2}a", "\u{2}ab", "abc"]
        );
        assert!(matches!(ngram_features(&chars("abc"), 1), Err(Error::Config(_))));
        assert!(ngram_features(&chars("abc"), 5).is_err());
    }

    #[test]
    fn embed_concatenates_rows() {
        let ct = Tensor::matrix(4, 2, vec![0., 0., 1., 1., 2., 3., 4., 5.]);
        let nt = Tensor::matrix(3, 3, vec![0., 0., 0., 9., 9., 9., 7., 8., 6.]);
        let e = embed(&[2, 3], &ct, Some((&[2, UNK], &nt)));
        assert_eq!(e.shape(), &[2, 5]);
        assert_eq!(e.row_slice(0), &[2., 3., 7., 8., 6.]);
        // unseen n-gram maps to the UNK row
        assert_eq!(&e.row_slice(1)[2..], nt.row_slice(UNK));
        assert_eq!(embed(&[2, 3], &ct, None).shape(), &[2, 2]);
    }

    #[test]
    fn default_width() {
        let ct = Tensor::zeros(&[5, 128]);
        let nt = Tensor::zeros(&[5, 128]);
        assert_eq!(embed(&[3, 4, 1], &ct, Some((&[1, 1, 3], &nt))).cols(), 256);
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let t = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 0.1, -1.0 / 3.0, 1e-17]);
        save_embeddings(&p, &t).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("2 3\n"));
        assert_eq!(load_embeddings(&p).unwrap(), t);
        fs::write(&p, "2 2\n1 2\n3\n").unwrap();
        assert!(load_embeddings(&p).is_err());
    }

    proptest! {
        #[test]
        fn one_ngram_per_char(s in "[a-d\u{4e00}-\u{4e05}]{1,30}", order in 2usize..=4) {
            let cs = chars(&s);
            let g = ngram_features(&cs, order).unwrap();
            prop_assert_eq!(g.len(), cs.len());
            for (t, tok) in g.iter().enumerate() {
                prop_assert_eq!(tok.chars().count(), order);
                prop_assert_eq!(tok.chars().last(), Some(cs[t]));
            }
        }
    }
}
