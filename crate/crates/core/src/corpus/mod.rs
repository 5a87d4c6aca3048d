//! Segmented-text data model: sentences, BMES tags, corpus files, splits and evaluation.

mod eval;
mod io;
mod split;
mod tags;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{evaluate_f1, SegmentationEval};
pub use io::{
    read_labeled_corpus, read_raw_corpus, write_labeled_corpus, write_raw_corpus,
};
pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use tags::{check_grammar, tags_to_words, words_to_tags, Tag, TagSeq, NUM_TAGS};

/// Default maximum sentence length in characters.
pub const DEFAULT_MAX_LEN: usize = 200;

/// Characters that end a sentence, used when splitting overlong lines.
const SENTENCE_END: &[char] = &['。', '！', '？', '；', '!', '?', ';', '.'];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub chars: Vec<char>,
}

impl Sentence {
    pub fn new(id: usize, chars: Vec<char>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::Format(format!("sentence {id} is empty")));
        }
        if let Some(c) = chars.iter().find(|c| c.is_whitespace() || c.is_control()) {
            return Err(Error::Format(format!(
                "sentence {id} contains whitespace or control character {c:?}"
            )));
        }
        Ok(Sentence { id, chars })
    }

    pub fn from_text(id: usize, text: &str) -> Result<Self> {
        Sentence::new(id, text.chars().collect())
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub tags: TagSeq,
}

impl LabeledSentence {
    pub fn new(sentence: Sentence, tags: TagSeq) -> Result<Self> {
        if sentence.len() != tags.len() {
            return Err(Error::Contract(format!(
                "sentence {} has {} characters but {} tags",
                sentence.id,
                sentence.len(),
                tags.len()
            )));
        }
        Ok(LabeledSentence { sentence, tags })
    }

    /// Parses a line of words separated by single ASCII spaces.
    pub fn from_segmented_line(id: usize, line: &str) -> Result<Self> {
        let words: Vec<&str> = line.split(' ').collect();
        let tags = words_to_tags(&words)
            .map_err(|e| Error::Format(format!("sentence {id}: {e}")))?;
        let sentence = Sentence::new(id, words.concat().chars().collect())?;
        LabeledSentence::new(sentence, tags)
    }

    pub fn id(&self) -> usize {
        self.sentence.id
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        tags_to_words(&self.sentence.chars, &self.tags).expect("lengths checked at construction")
    }

    pub fn to_segmented_line(&self) -> String {
        self.words().join(" ")
    }
}

/// Splits a labeled sentence longer than `max_len` characters.
///
/// Cuts at the last sentence-ending punctuation (that also closes a word)
/// before the limit; when there is none the sentence is truncated at `max_len`
/// and the remainder dropped. Pieces after the first get ids from `next_id`.
pub fn enforce_max_len(
    sentence: LabeledSentence,
    max_len: usize,
    next_id: &mut usize,
) -> Vec<LabeledSentence> {
    assert!(max_len >= 1);
    let mut out = Vec::new();
    let mut rest = sentence;
    while rest.len() > max_len {
        let chars = &rest.sentence.chars;
        let tags = rest.tags.tags();
        let cut = (1..=max_len)
            .rev()
            .find(|&p| SENTENCE_END.contains(&chars[p - 1]) && tags[p - 1].can_end());
        match cut {
            Some(p) => {
                tracing::info!(id = rest.id(), at = p, "splitting overlong sentence");
                let head = labeled_piece(rest.id(), &chars[..p], &tags[..p]);
                let tail_id = *next_id;
                *next_id += 1;
                let tail = labeled_piece(tail_id, &chars[p..], &tags[p..]);
                out.push(head);
                rest = tail;
            }
            None => {
                tracing::warn!(id = rest.id(), len = rest.len(), max_len, "truncating overlong sentence");
                let mut cut_tags = tags[..max_len].to_vec();
                repair_tail(&mut cut_tags);
                rest = labeled_piece(rest.id(), &chars[..max_len], &cut_tags);
            }
        }
    }
    out.push(rest);
    out
}

/// Raw-sentence counterpart of [`enforce_max_len`].
pub fn enforce_max_len_raw(sentence: Sentence, max_len: usize, next_id: &mut usize) -> Vec<Sentence> {
    assert!(max_len >= 1);
    let mut out = Vec::new();
    let mut rest = sentence;
    while rest.len() > max_len {
        let cut = (1..=max_len).rev().find(|&p| SENTENCE_END.contains(&rest.chars[p - 1]));
        match cut {
            Some(p) => {
                let tail = Sentence {
                    id: *next_id,
                    chars: rest.chars[p..].to_vec(),
                };
                *next_id += 1;
                rest.chars.truncate(p);
                out.push(rest);
                rest = tail;
            }
            None => {
                tracing::warn!(id = rest.id, len = rest.len(), max_len, "truncating overlong sentence");
                rest.chars.truncate(max_len);
            }
        }
    }
    out.push(rest);
    out
}

fn labeled_piece(id: usize, chars: &[char], tags: &[Tag]) -> LabeledSentence {
    LabeledSentence {
        sentence: Sentence {
            id,
            chars: chars.to_vec(),
        },
        tags: TagSeq::new(tags.to_vec()).expect("piece cut at a word boundary"),
    }
}

// A cut inside a word leaves a dangling B/M at the end; close that word.
fn repair_tail(tags: &mut [Tag]) {
    if let Some(last) = tags.last_mut() {
        *last = match *last {
            Tag::B => Tag::S,
            Tag::M => Tag::E,
            t => t,
        };
    }
}

/// Counts words by character length.
pub fn word_length_census<W: AsRef<str>>(words: impl IntoIterator<Item = W>) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for w in words {
        *counts.entry(w.as_ref().chars().count()).or_insert(0) += 1;
    }
    counts
}

pub fn corpus_word_length_census(corpus: &[LabeledSentence]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for s in corpus {
        for (start, end) in s.tags.spans() {
            *counts.entry(end - start).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_segmented_line() {
        let s = LabeledSentence::from_segmented_line(3, "病人 长期 于").unwrap();
        assert_eq!(s.id(), 3);
        assert_eq!(s.tags.to_string(), "BEBES");
        assert_eq!(s.to_segmented_line(), "病人 长期 于");
        assert!(LabeledSentence::from_segmented_line(0, "a  b").is_err());
        assert!(LabeledSentence::from_segmented_line(0, "").is_err());
        assert!(LabeledSentence::from_segmented_line(0, "a\tb").is_err());
    }

    #[test]
    fn census_examples() {
        let c = word_length_census(["ab", "c", "ab"]);
        assert_eq!(c, BTreeMap::from([(1, 1), (2, 2)]));
        assert!(word_length_census(Vec::<String>::new()).is_empty());
        let s = LabeledSentence::from_segmented_line(0, "ab c ab").unwrap();
        assert_eq!(corpus_word_length_census(&[s]), c);
    }

    #[test]
    fn splits_at_sentence_end() {
        let s = LabeledSentence::from_segmented_line(0, "ab 。 cd e 。 fg").unwrap();
        let mut next = 10;
        let pieces = enforce_max_len(s, 7, &mut next);
        let lines: Vec<String> = pieces.iter().map(|p| p.to_segmented_line()).collect();
        assert_eq!(lines, vec!["ab 。 cd e 。", "fg"]);
        assert_eq!(pieces[1].id(), 10);
        assert_eq!(next, 11);
    }

    #[test]
    fn truncates_without_punctuation() {
        let s = LabeledSentence::from_segmented_line(0, "abc defg").unwrap();
        let mut next = 1;
        let pieces = enforce_max_len(s, 5, &mut next);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].to_segmented_line(), "abc de");
        assert_eq!(next, 1);

        let raw = Sentence::from_text(0, "abcdefg").unwrap();
        let pieces = enforce_max_len_raw(raw, 3, &mut next);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].text(), "abc");
    }

    #[test]
    fn short_sentences_untouched() {
        let s = LabeledSentence::from_segmented_line(0, "ab c").unwrap();
        let mut next = 1;
        assert_eq!(enforce_max_len(s.clone(), 200, &mut next), vec![s]);
    }
}
