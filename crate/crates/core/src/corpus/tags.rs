//! The BMES character-position tag scheme and its conversions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Character position within a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    M,
    E,
    S,
}

/// Number of tag classes.
pub const NUM_TAGS: usize = 4;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::M, Tag::E, Tag::S];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        Tag::ALL.get(index).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Tag::B => 'B',
            Tag::M => 'M',
            Tag::E => 'E',
            Tag::S => 'S',
        }
    }

    pub fn from_char(c: char) -> Option<Tag> {
        match c {
            'B' => Some(Tag::B),
            'M' => Some(Tag::M),
            'E' => Some(Tag::E),
            'S' => Some(Tag::S),
            _ => None,
        }
    }

    /// Whether a sentence may open with this tag.
    pub fn can_start(self) -> bool {
        matches!(self, Tag::B | Tag::S)
    }

    /// Whether a sentence may close with this tag.
    pub fn can_end(self) -> bool {
        matches!(self, Tag::E | Tag::S)
    }

    /// Whether `next` may directly follow `self`.
    pub fn allows_next(self, next: Tag) -> bool {
        match self {
            Tag::B | Tag::M => matches!(next, Tag::M | Tag::E),
            Tag::E | Tag::S => matches!(next, Tag::B | Tag::S),
        }
    }
}

/// A tag sequence that satisfies the BMES grammar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TagSeq(Vec<Tag>);

impl TagSeq {
    pub fn new(tags: Vec<Tag>) -> Result<Self> {
        check_grammar(&tags)?;
        Ok(TagSeq(tags))
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Tag> {
        self.0
    }

    /// Word spans as half-open `(start, end)` character offsets.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = 0;
        for (i, tag) in self.0.iter().enumerate() {
            if tag.can_end() {
                spans.push((start, i + 1));
                start = i + 1;
            }
        }
        spans
    }

    /// Interior cut positions: offsets `p` in `1..len` where a word ends before `p`.
    pub fn boundaries(&self) -> Vec<usize> {
        let n = self.0.len();
        self.spans()
            .into_iter()
            .map(|(_, end)| end)
            .filter(|&end| end < n)
            .collect()
    }

    /// Tags for a sentence of `len` characters cut at `boundaries`.
    ///
    /// Boundaries must be strictly increasing and inside `1..len`.
    pub fn from_boundaries(len: usize, boundaries: &[usize]) -> Result<Self> {
        if len == 0 {
            return Err(Error::Contract("sentence is empty".into()));
        }
        let mut prev = 0;
        for &b in boundaries {
            if b == 0 || b >= len {
                return Err(Error::Contract(format!(
                    "boundary {b} out of range 1..{len}"
                )));
            }
            if b <= prev {
                return Err(Error::Contract(format!(
                    "boundaries not strictly increasing at {b}"
                )));
            }
            prev = b;
        }
        let mut tags = Vec::with_capacity(len);
        let mut start = 0;
        for &end in boundaries.iter().chain(std::iter::once(&len)) {
            push_word(&mut tags, end - start);
            start = end;
        }
        Ok(TagSeq(tags))
    }
}

impl fmt::Display for TagSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for TagSeq {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tags = s
            .chars()
            .map(|c| Tag::from_char(c).ok_or_else(|| Error::Format(format!("bad tag {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        TagSeq::new(tags)
    }
}

impl TryFrom<String> for TagSeq {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TagSeq> for String {
    fn from(t: TagSeq) -> String {
        t.to_string()
    }
}

pub fn check_grammar(tags: &[Tag]) -> Result<()> {
    let (first, last) = match (tags.first(), tags.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Contract("empty tag sequence".into())),
    };
    if !first.can_start() {
        return Err(Error::Contract(format!("sequence cannot start with {first:?}")));
    }
    if !last.can_end() {
        return Err(Error::Contract(format!("sequence cannot end with {last:?}")));
    }
    for (i, pair) in tags.windows(2).enumerate() {
        if !pair[0].allows_next(pair[1]) {
            return Err(Error::Contract(format!(
                "illegal transition {:?}->{:?} at position {}",
                pair[0],
                pair[1],
                i + 1
            )));
        }
    }
    Ok(())
}

fn push_word(tags: &mut Vec<Tag>, len: usize) {
    match len {
        0 => {}
        1 => tags.push(Tag::S),
        k => {
            tags.push(Tag::B);
            tags.extend(std::iter::repeat_n(Tag::M, k - 2));
            tags.push(Tag::E);
        }
    }
}

/// Encodes a segmented word sequence as BMES tags.
pub fn words_to_tags<W: AsRef<str>>(words: &[W]) -> Result<TagSeq> {
    let mut tags = Vec::new();
    for w in words {
        let n = w.as_ref().chars().count();
        if n == 0 {
            return Err(Error::Format("empty word".into()));
        }
        push_word(&mut tags, n);
    }
    if tags.is_empty() {
        return Err(Error::Format("no words".into()));
    }
    Ok(TagSeq(tags))
}

/// Decodes tags back into words over the given characters.
pub fn tags_to_words(chars: &[char], tags: &TagSeq) -> Result<Vec<String>> {
    if chars.len() != tags.len() {
        return Err(Error::Contract(format!(
            "{} characters but {} tags",
            chars.len(),
            tags.len()
        )));
    }
    Ok(tags
        .spans()
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_sample_sentence() {
        let line = "病人/长期/于/我院/心血管科/住院/治疗/。";
        let words: Vec<&str> = line.split('/').collect();
        assert_eq!(words_to_tags(&words).unwrap().to_string(), "BEBESBEBMMEBEBES");
    }

    #[test]
    fn encodes_small_cases() {
        assert_eq!(words_to_tags(&["於"]).unwrap().to_string(), "S");
        assert_eq!(words_to_tags(&["ab", "c"]).unwrap().to_string(), "BES");
        assert!(matches!(words_to_tags(&["ab", ""]), Err(Error::Format(_))));
    }

    #[test]
    fn decodes_small_cases() {
        let chars: Vec<char> = "abcde".chars().collect();
        let t: TagSeq = "BEBME".parse().unwrap();
        assert_eq!(tags_to_words(&chars, &t).unwrap(), vec!["ab", "cde"]);
        let t: TagSeq = "S".parse().unwrap();
        assert_eq!(tags_to_words(&['a'], &t).unwrap(), vec!["a"]);
        let t: TagSeq = "BES".parse().unwrap();
        assert_eq!(tags_to_words(&['a', 'b', 'c'], &t).unwrap(), vec!["ab", "c"]);
        assert!(matches!(tags_to_words(&['a'], &t), Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_ungrammatical() {
        for bad in ["M", "E", "B", "BS", "SM", "SE", "BB", "MS", ""] {
            assert!(bad.parse::<TagSeq>().is_err(), "{bad}");
        }
        for good in ["S", "BE", "BME", "SBMMES"] {
            assert!(good.parse::<TagSeq>().is_ok(), "{good}");
        }
    }

    #[test]
    fn boundaries_examples() {
        assert_eq!(TagSeq::from_boundaries(5, &[2, 3]).unwrap().to_string(), "BESBE");
        assert_eq!(TagSeq::from_boundaries(5, &[]).unwrap().to_string(), "BMMME");
        assert!(TagSeq::from_boundaries(5, &[6]).is_err());
        assert!(TagSeq::from_boundaries(5, &[5]).is_err());
        assert!(TagSeq::from_boundaries(5, &[0]).is_err());
        assert!(TagSeq::from_boundaries(5, &[3, 2]).is_err());
        assert!(TagSeq::from_boundaries(5, &[2, 2]).is_err());
    }

    fn word_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-e一二三四]{1,5}", 1..12)
    }

    proptest! {
        #[test]
        fn round_trip(words in word_strategy()) {
            let tags = words_to_tags(&words).unwrap();
            prop_assert!(check_grammar(tags.tags()).is_ok());
            let chars: Vec<char> = words.concat().chars().collect();
            prop_assert_eq!(tags_to_words(&chars, &tags).unwrap(), words);
        }

        #[test]
        fn boundaries_round_trip(len in 1usize..30, cuts in prop::collection::btree_set(1usize..30, 0..10)) {
            let cuts: Vec<usize> = cuts.into_iter().filter(|&c| c < len).collect();
            let tags = TagSeq::from_boundaries(len, &cuts).unwrap();
            prop_assert_eq!(tags.len(), len);
            prop_assert_eq!(tags.boundaries(), cuts);
        }
    }
}
