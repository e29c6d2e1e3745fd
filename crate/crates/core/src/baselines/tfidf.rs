//! Union of each patient's top-k tf-idf terms.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfidfVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TfidfVocabulary {
    /// Tokens in lexicographic order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = tokens.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TfidfVocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Keeps in-vocabulary tokens only, as indices.
    pub fn filter<'a>(&self, tokens: impl IntoIterator<Item = &'a String>) -> Vec<usize> {
        tokens.into_iter().filter_map(|t| self.index_of(t)).collect()
    }
}

/// tf = count within the patient, idf = ln(N / df) with df counted over
/// patients. Each patient contributes its `k` best-scoring tokens (ties
/// lexicographic); stopwords are removed first.
pub fn build_tfidf_vocab(
    patients: &[Vec<String>],
    k: usize,
    stopwords: &HashSet<String>,
) -> Result<TfidfVocabulary> {
    if patients.is_empty() {
        return Err(Error::Data("tf-idf vocabulary over an empty corpus".into()));
    }
    let tfs: Vec<BTreeMap<&str, usize>> = patients
        .iter()
        .map(|doc| {
            let mut tf = BTreeMap::new();
            for t in doc.iter().filter(|t| !stopwords.contains(*t)) {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tf in &tfs {
        for t in tf.keys() {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = patients.len() as f64;
    let mut chosen = BTreeSet::new();
    for tf in &tfs {
        let mut scored: Vec<(&str, f64)> = tf
            .iter()
            .map(|(t, &c)| (*t, c as f64 * (n / df[t] as f64).ln()))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        chosen.extend(scored.into_iter().take(k).map(|(t, _)| t.to_string()));
    }
    Ok(TfidfVocabulary::from_tokens(chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn single_patient_keeps_everything_but_stopwords() {
        let stop: HashSet<String> = ["the".to_string()].into();
        let v = build_tfidf_vocab(&[doc("the cat sat on the mat")], 500, &stop).unwrap();
        assert_eq!(v.tokens(), &["cat", "mat", "on", "sat"]);
    }

    #[test]
    fn hand_computed_micro_corpus() {
        // df: a=3, b=2, c=1, d=1, e=1.  idf(a)=0, idf(b)=ln 1.5, idf(c..e)=ln 3.
        // p1: a a b c -> b: ln1.5 = 0.405, c: ln3 = 1.099, a: 0    -> {c, b}
        // p2: a b b   -> b: 2 ln1.5 = 0.811, a: 0                 -> {b, a}
        // p3: a d e e -> e: 2 ln3, d: ln3, a: 0                   -> {e, d}
        let corpus = [doc("a a b c"), doc("a b b"), doc("a d e e")];
        let v = build_tfidf_vocab(&corpus, 2, &HashSet::new()).unwrap();
        assert_eq!(v.tokens(), &["a", "b", "c", "d", "e"]);

        let v = build_tfidf_vocab(&corpus, 1, &HashSet::new()).unwrap();
        assert_eq!(v.tokens(), &["b", "c", "e"]);
    }

    #[test]
    fn ubiquitous_token_loses_to_informative_ones() {
        let corpus = [doc("x x x x y"), doc("x z"), doc("x w")];
        let v = build_tfidf_vocab(&corpus, 1, &HashSet::new()).unwrap();
        assert!(v.index_of("x").is_none());
        assert!(build_tfidf_vocab(&[], 1, &HashSet::new()).is_err());
    }
}
