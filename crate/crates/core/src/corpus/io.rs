use std::fs;
use std::io::Write;
use std::path::Path;

use super::{LabeledSentence, Sentence};
use crate::error::{Error, Result};

/// Reads a segmented corpus: one sentence per line, words separated by single spaces.
///
/// Blank lines are skipped; ids are assigned in file order.
pub fn read_labeled_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(id, line)| {
            LabeledSentence::from_segmented_line(id, line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), id + 1)))
        })
        .collect()
}

/// Reads raw text: one unsegmented sentence per line.
pub fn read_raw_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(id, line)| Sentence::from_text(id, line))
        .collect()
}

pub fn write_labeled_corpus(path: impl AsRef<Path>, corpus: &[LabeledSentence]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in corpus {
        writeln!(out, "{}", s.to_segmented_line()).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_raw_corpus(path: impl AsRef<Path>, corpus: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in corpus {
        out.push_str(&s.text());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "病人 长期 于\n\n我院 心血管科\n").unwrap();
        let c = read_labeled_corpus(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].id(), 1);
        assert_eq!(c[1].tags.to_string(), "BEBMME");
        let q = dir.path().join("d.txt");
        write_labeled_corpus(&q, &c).unwrap();
        assert_eq!(read_labeled_corpus(&q).unwrap(), c);

        let r = dir.path().join("raw.txt");
        fs::write(&r, "病人长期于\n\n我院\n").unwrap();
        let raw = read_raw_corpus(&r).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[0].text(), "病人长期于");
        assert!(read_raw_corpus(&p).is_err());
    }

    #[test]
    fn reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "ab c\nab  c\n").unwrap();
        let err = read_labeled_corpus(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(matches!(read_labeled_corpus(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
