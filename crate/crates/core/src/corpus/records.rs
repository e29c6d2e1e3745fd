//! Patient documents: tokenized (string) form for storage, indexed form for
//! the model.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{category_id, segment_and_tokenize, Cohort, TaskLabels};
use crate::{Error, Result};

/// Per-patient size limits applied after tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_sentences: usize,
    pub max_tokens: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            max_sentences: 1000,
            max_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    /// Index into [`super::CATEGORIES`].
    pub category: usize,
    /// Position of the source note in the patient's chronological note list.
    pub note: usize,
}

/// A patient's preprocessed record before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub patient_id: String,
    pub sentences: Vec<TokenizedSentence>,
    pub labels: TaskLabels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    pub category: usize,
    pub note: usize,
}

/// A patient's record indexed against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sentences: Vec<Sentence>,
    pub labels: TaskLabels,
}

/// Orders each patient's notes by chart time (input order breaks ties),
/// splits them into sentences and applies `limits`. Patients without any
/// token are dropped. Output is sorted by patient id.
pub fn build_documents(
    cohort: &Cohort,
    labels: &BTreeMap<String, TaskLabels>,
    limits: Truncation,
) -> Result<Vec<Document>> {
    let mut by_patient: HashMap<&str, Vec<&super::RawNote>> = HashMap::new();
    for note in &cohort.notes {
        by_patient.entry(&note.patient_id).or_default().push(note);
    }
    let mut docs = Vec::with_capacity(cohort.patient_ids.len());
    for pid in &cohort.patient_ids {
        let Some(notes) = by_patient.get_mut(pid.as_str()) else {
            continue;
        };
        let labels = *labels
            .get(pid)
            .ok_or_else(|| Error::Data(format!("no admission record for patient {pid}")))?;
        notes.sort_by_key(|n| n.chart_time);
        let mut sentences = Vec::new();
        for (ni, note) in notes.iter().enumerate() {
            let category = category_id(&note.category).ok_or_else(|| {
                Error::Data(format!("patient {pid}: category {:?} not modelled", note.category))
            })?;
            for tokens in segment_and_tokenize(&note.text) {
                sentences.push(TokenizedSentence {
                    tokens,
                    category,
                    note: ni,
                });
            }
        }
        let sentences = truncate(sentences, limits);
        if sentences.is_empty() {
            continue;
        }
        docs.push(Document {
            patient_id: pid.clone(),
            sentences,
            labels,
        });
    }
    Ok(docs)
}

/// Caps tokens per sentence (keeping the prefix), then removes the longest
/// sentences (later ones first among equals) until the sentence cap holds.
pub fn truncate(mut sentences: Vec<TokenizedSentence>, limits: Truncation) -> Vec<TokenizedSentence> {
    for s in &mut sentences {
        s.tokens.truncate(limits.max_tokens);
    }
    if sentences.len() > limits.max_sentences {
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        order.sort_by(|&a, &b| {
            sentences[b]
                .tokens
                .len()
                .cmp(&sentences[a].tokens.len())
                .then(b.cmp(&a))
        });
        let excess = sentences.len() - limits.max_sentences;
        let mut drop = vec![false; sentences.len()];
        for &i in &order[..excess] {
            drop[i] = true;
        }
        let mut keep = drop.iter().map(|d| !d);
        sentences.retain(|_| keep.next().unwrap_or(true));
    }
    sentences
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for d in docs {
        let line = serde_json::to_string(d).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_time, RawNote};

    fn sentence(len: usize, tag: usize) -> TokenizedSentence {
        TokenizedSentence {
            tokens: (0..len).map(|i| format!("t{tag}_{i}")).collect(),
            category: 0,
            note: tag,
        }
    }

    #[test]
    fn token_cap_keeps_prefix() {
        let out = truncate(vec![sentence(10, 0)], Truncation { max_sentences: 5, max_tokens: 3 });
        assert_eq!(out[0].tokens, vec!["t0_0", "t0_1", "t0_2"]);
    }

    #[test]
    fn sentence_cap_drops_longest_first() {
        let input = vec![sentence(2, 0), sentence(7, 1), sentence(3, 2), sentence(7, 3), sentence(1, 4)];
        let out = truncate(input, Truncation { max_sentences: 3, max_tokens: 64 });
        let notes: Vec<usize> = out.iter().map(|s| s.note).collect();
        assert_eq!(notes, vec![0, 2, 4]);
    }

    #[test]
    fn documents_follow_chart_time() {
        let t = |s| parse_time(s).unwrap();
        let cohort = Cohort {
            patient_ids: vec!["p".into()],
            notes: vec![
                RawNote { patient_id: "p".into(), category: "nursing".into(), chart_time: t("2130-01-03"), text: "later note .".into() },
                RawNote { patient_id: "p".into(), category: "radiology".into(), chart_time: t("2130-01-02"), text: "no effusion . stable .".into() },
            ],
        };
        let labels = BTreeMap::from([("p".to_string(), TaskLabels { in_hospital: false, post_30d: Some(false), post_1y: Some(false) })]);
        let docs = build_documents(&cohort, &labels, Truncation::default()).unwrap();
        let first: Vec<_> = docs[0].sentences.iter().map(|s| s.tokens.join(" ")).collect();
        assert_eq!(first, vec!["no effusion", "stable", "later note"]);
        assert_eq!(docs[0].sentences[0].category, category_id("radiology").unwrap());
        assert_eq!(docs[0].sentences[2].note, 1);
    }
}
