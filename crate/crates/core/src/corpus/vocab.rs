//! Frequency-capped vocabulary with reserved padding and out-of-vocabulary
//! entries.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::records::{Document, PatientRecord, Sentence};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
const RESERVED: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Keeps the `cap` most frequent training tokens; equal counts are ordered
/// lexicographically.
pub fn build_vocabulary(train: &[Document], cap: usize) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::InvalidArgument("vocabulary cap must be at least 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in train {
        for s in &doc.sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in index order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Total entries, reserved ones included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the token list, truncated to 64 bits.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn index_document(&self, doc: &Document) -> PatientRecord {
        PatientRecord {
            patient_id: doc.patient_id.clone(),
            sentences: doc
                .sentences
                .iter()
                .map(|s| Sentence {
                    tokens: s.tokens.iter().map(|t| self.index_of(t)).collect(),
                    category: s.category,
                    note: s.note,
                })
                .collect(),
            labels: doc.labels,
        }
    }

    /// Two header lines naming the OOV and PAD tokens, then one token per
    /// line in index order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "oov\t{OOV_TOKEN}")?;
        writeln!(w, "pad\t{PAD_TOKEN}")?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Data(format!("vocabulary file truncated before {what}")))?
                .map_err(|e| Error::Data(format!("vocabulary read failed: {e}")))
        };
        let oov = next("OOV header")?;
        let pad = next("PAD header")?;
        if oov != format!("oov\t{OOV_TOKEN}") || pad != format!("pad\t{PAD_TOKEN}") {
            return Err(Error::Data(format!(
                "unexpected vocabulary header {oov:?} / {pad:?}"
            )));
        }
        let mut body = Vec::new();
        loop {
            match next("EOF") {
                Ok(line) => body.push(line),
                Err(_) => break,
            }
        }
        if body.len() < RESERVED || body[PAD] != PAD_TOKEN || body[OOV] != OOV_TOKEN {
            return Err(Error::Data("vocabulary body must start with <pad>, <unk>".into()));
        }
        Vocabulary::from_tokens(body.into_iter().skip(RESERVED))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TaskLabels, TokenizedSentence};

    fn doc(text: &str) -> Document {
        Document {
            patient_id: "p".into(),
            sentences: vec![TokenizedSentence {
                tokens: text.split_whitespace().map(String::from).collect(),
                category: 0,
                note: 0,
            }],
            labels: TaskLabels {
                in_hospital: false,
                post_30d: Some(false),
                post_1y: Some(false),
            },
        }
    }

    #[test]
    fn frequency_cap() {
        let v = build_vocabulary(&[doc("a a b")], 1).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.contains("a"));
        assert_eq!(v.index_of("b"), OOV);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocabulary(&[doc("y x")], 1).unwrap();
        assert!(v.contains("x") && !v.contains("y"));
    }

    #[test]
    fn empty_corpus_and_zero_cap_are_errors() {
        assert!(build_vocabulary(&[], 10).is_err());
        assert!(build_vocabulary(&[doc("a")], 0).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let v = build_vocabulary(&[doc("the cat sat on the mat")], 100).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("oov\t<unk>\npad\t<pad>\n<pad>\n<unk>\nthe\n"));
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read_from(&b"garbage\n"[..]).is_err());
    }

    #[test]
    fn indexing_maps_oov() {
        let v = build_vocabulary(&[doc("a b")], 10).unwrap();
        let rec = v.index_document(&doc("a z b"));
        assert_eq!(rec.sentences[0].tokens, vec![v.index_of("a"), OOV, v.index_of("b")]);
    }
}
