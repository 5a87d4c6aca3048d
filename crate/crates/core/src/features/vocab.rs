use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ngram_features;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const RESERVED: [&str; 3] = ["<PAD>", "<UNK>", "<BOS>"];

/// Dense token ids with the reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenIndex {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl TokenIndex {
    /// Keeps tokens seen at least `min_freq` times, most frequent first (ties by token).
    pub fn from_counts(counts: HashMap<String, usize>, min_freq: usize) -> Self {
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix present")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Format("vocabulary must start with <PAD>, <UNK>, <BOS>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(TokenIndex { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub min_char_freq: usize,
    pub min_ngram_freq: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_char_freq: 1,
            min_ngram_freq: 2,
        }
    }
}

/// Character and n-gram vocabularies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub chars: TokenIndex,
    pub ngrams: TokenIndex,
}

impl Vocab {
    /// Counts characters and, when `ngram_order` is set, n-grams over `sentences`.
    pub fn build<'a>(
        sentences: impl IntoIterator<Item = &'a [char]>,
        ngram_order: Option<usize>,
        config: VocabConfig,
    ) -> Result<Self> {
        let mut chars: HashMap<String, usize> = HashMap::new();
        let mut ngrams: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for c in s {
                *chars.entry(c.to_string()).or_insert(0) += 1;
            }
            if let Some(order) = ngram_order {
                for g in ngram_features(s, order)? {
                    *ngrams.entry(g).or_insert(0) += 1;
                }
            }
        }
        Ok(Vocab {
            chars: TokenIndex::from_counts(chars, config.min_char_freq),
            ngrams: TokenIndex::from_counts(ngrams, config.min_ngram_freq),
        })
    }

    pub fn char_ids(&self, s: &[char]) -> Vec<usize> {
        let mut buf = [0u8; 4];
        s.iter().map(|c| self.chars.id(c.encode_utf8(&mut buf))).collect()
    }

    pub fn ngram_ids(&self, s: &[char], order: usize) -> Result<Vec<usize>> {
        Ok(ngram_features(s, order)?
            .iter()
            .map(|g| self.ngrams.id(g))
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.chars.save(dir.join("chars.vocab"))?;
        self.ngrams.save(dir.join("ngrams.vocab"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Vocab {
            chars: TokenIndex::load(dir.join("chars.vocab"))?,
            ngrams: TokenIndex::load(dir.join("ngrams.vocab"))?,
        })
    }
}
