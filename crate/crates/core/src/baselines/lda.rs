//! Latent Dirichlet allocation by collapsed Gibbs sampling.
//!
//! Serialized form (text): a `notecnn-lda 1` line, a `K V alpha beta` line,
//! then `K` lines of `V` topic-word counts.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{seed, Error, Result};

const FORMAT_TAG: &str = "notecnn-lda";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaConfig {
    pub topics: usize,
    /// Document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    /// Topic-word prior; `None` means `200 / V`.
    pub beta: Option<f64>,
    pub iterations: usize,
    /// Sweeps discarded before proportions are averaged.
    pub burn_in: usize,
    pub infer_iterations: usize,
    pub infer_burn_in: usize,
    /// Set from the run-wide seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 50,
            alpha: None,
            beta: None,
            iterations: 200,
            burn_in: 100,
            infer_iterations: 50,
            infer_burn_in: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `topics x vocab_size`, row-major.
    pub topic_word: Vec<u32>,
    pub topic_totals: Vec<u32>,
    /// Per training document, `topics` counts.
    pub doc_topic: Vec<Vec<u32>>,
    /// Per training document, the topic of every token.
    pub assignments: Vec<Vec<u32>>,
    /// Per training document, proportions averaged over post-burn-in sweeps.
    pub doc_proportions: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Unnormalized `p(z = k)` for a token of word `w`:
/// `(n_dk + alpha) (n_kw + beta) / (n_k + V beta)`.
pub fn conditional(doc_topic: &[u32], word_counts: &[f64], totals: &[u32], alpha: f64, beta: f64, vocab: usize) -> Vec<f64> {
    (0..doc_topic.len())
        .map(|k| {
            (doc_topic[k] as f64 + alpha) * (word_counts[k] + beta) / (totals[k] as f64 + vocab as f64 * beta)
        })
        .collect()
}

fn sample<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

fn proportions(doc_topic: &[u32], len: usize, alpha: f64) -> Vec<f64> {
    let denom = len as f64 + doc_topic.len() as f64 * alpha;
    doc_topic.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

impl TopicModel {
    fn word_column(&self, w: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.topic_word[k * self.vocab_size + w] as f64;
        }
    }

    /// Checks every count identity against the stored assignments.
    pub fn check_counts(&self) -> Result<()> {
        let k = self.topics;
        let mut totals = vec![0u32; k];
        let mut token_total = 0u64;
        for (d, z) in self.assignments.iter().enumerate() {
            let mut dt = vec![0u32; k];
            for &t in z {
                dt[t as usize] += 1;
                totals[t as usize] += 1;
            }
            if dt != self.doc_topic[d] {
                return Err(Error::State(format!("document {d} topic counts out of sync")));
            }
            if dt.iter().map(|&c| c as usize).sum::<usize>() != z.len() {
                return Err(Error::State(format!("document {d} counts do not sum to its length")));
            }
            token_total += z.len() as u64;
        }
        if totals != self.topic_totals {
            return Err(Error::State("topic totals out of sync".into()));
        }
        if self.topic_totals.iter().map(|&c| c as u64).sum::<u64>() != token_total
            || self.topic_word.iter().map(|&c| c as u64).sum::<u64>() != token_total
        {
            return Err(Error::State("topic-word counts do not match the token total".into()));
        }
        for t in 0..k {
            let row: u64 = self.topic_word[t * self.vocab_size..(t + 1) * self.vocab_size]
                .iter()
                .map(|&c| c as u64)
                .sum();
            if row != self.topic_totals[t] as u64 {
                return Err(Error::State(format!("topic {t} row sum differs from its total")));
            }
        }
        Ok(())
    }

    /// Word indices of topic `k` by descending count, ties by index.
    pub fn top_words(&self, k: usize, n: usize) -> Vec<usize> {
        let row = &self.topic_word[k * self.vocab_size..(k + 1) * self.vocab_size];
        let mut idx: Vec<usize> = (0..self.vocab_size).collect();
        idx.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }

    /// SHA-256 over the fitted topic-word counts and priors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.alpha.to_le_bytes());
        h.update(self.beta.to_le_bytes());
        for c in &self.topic_word {
            h.update(c.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG} {FORMAT_VERSION}");
        let _ = writeln!(s, "{} {} {} {}", self.topics, self.vocab_size, self.alpha, self.beta);
        for k in 0..self.topics {
            let row = &self.topic_word[k * self.vocab_size..(k + 1) * self.vocab_size];
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        w.write_all(s.as_bytes()).map_err(|e| Error::io("<topic model>", e))
    }

    /// Reads a fitted model for inference; training-document state is not
    /// stored and comes back empty.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("topic model file: {m}"));
        let mut lines = r.lines().map(|l| l.map_err(|e| Error::io("<topic model>", e)));
        let tag = lines.next().ok_or_else(|| bad("empty"))??;
        if tag != format!("{FORMAT_TAG} {FORMAT_VERSION}") {
            return Err(bad(&format!("unsupported header {tag:?}")));
        }
        let head = lines.next().ok_or_else(|| bad("missing dimensions"))??;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(bad("dimension line needs K V alpha beta"));
        }
        let topics: usize = parts[0].parse().map_err(|_| bad("bad K"))?;
        let vocab_size: usize = parts[1].parse().map_err(|_| bad("bad V"))?;
        let alpha: f64 = parts[2].parse().map_err(|_| bad("bad alpha"))?;
        let beta: f64 = parts[3].parse().map_err(|_| bad("bad beta"))?;
        let mut topic_word = Vec::with_capacity(topics * vocab_size);
        for k in 0..topics {
            let line = lines.next().ok_or_else(|| bad(&format!("missing topic row {k}")))??;
            let row: Vec<u32> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(&format!("bad count in topic row {k}")))?;
            if row.len() != vocab_size {
                return Err(bad(&format!("topic row {k} has {} counts, expected {vocab_size}", row.len())));
            }
            topic_word.extend(row);
        }
        let topic_totals = (0..topics)
            .map(|k| topic_word[k * vocab_size..(k + 1) * vocab_size].iter().sum())
            .collect();
        Ok(TopicModel {
            topics,
            vocab_size,
            alpha,
            beta,
            topic_word,
            topic_totals,
            doc_topic: Vec::new(),
            assignments: Vec::new(),
            doc_proportions: Vec::new(),
            seed: 0,
        })
    }
}

/// Fits LDA over word-index documents. Empty documents are skipped with a
/// warning (their proportions stay at the uniform prior).
pub fn lda_fit(docs: &[Vec<usize>], vocab_size: usize, config: &LdaConfig) -> Result<TopicModel> {
    lda_fit_with(docs, vocab_size, config, |_, _| Ok(()))
}

/// As [`lda_fit`], calling `after_sweep(model, sweep)` after every sweep.
pub fn lda_fit_with<F>(docs: &[Vec<usize>], vocab_size: usize, config: &LdaConfig, mut after_sweep: F) -> Result<TopicModel>
where
    F: FnMut(&TopicModel, usize) -> Result<()>,
{
    let k = config.topics;
    if k == 0 || vocab_size == 0 {
        return Err(Error::InvalidArgument("LDA needs at least one topic and one word".into()));
    }
    if config.burn_in >= config.iterations && config.iterations > 0 {
        return Err(Error::InvalidArgument("LDA burn-in must be shorter than the chain".into()));
    }
    if let Some(&w) = docs.iter().flatten().find(|&&w| w >= vocab_size) {
        return Err(Error::Data(format!("word index {w} outside vocabulary of {vocab_size}")));
    }
    let empty = docs.iter().filter(|d| d.is_empty()).count();
    if empty > 0 {
        log::warn!("LDA: skipping {empty} empty documents");
    }
    let alpha = config.alpha.unwrap_or(50.0 / k as f64);
    let beta = config.beta.unwrap_or(200.0 / vocab_size as f64);
    let mut rng = seed::rng(config.seed, &[0x1DA]);

    let mut m = TopicModel {
        topics: k,
        vocab_size,
        alpha,
        beta,
        topic_word: vec![0; k * vocab_size],
        topic_totals: vec![0; k],
        doc_topic: vec![vec![0; k]; docs.len()],
        assignments: Vec::with_capacity(docs.len()),
        doc_proportions: vec![vec![0.0; k]; docs.len()],
        seed: config.seed,
    };
    for (d, doc) in docs.iter().enumerate() {
        let z: Vec<u32> = doc.iter().map(|_| rng.gen_range(0..k) as u32).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            m.topic_word[t as usize * vocab_size + w] += 1;
            m.topic_totals[t as usize] += 1;
            m.doc_topic[d][t as usize] += 1;
        }
        m.assignments.push(z);
    }

    let mut col = vec![0.0; k];
    let mut samples = 0usize;
    for sweep in 0..config.iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = m.assignments[d][i] as usize;
                m.topic_word[old * vocab_size + w] -= 1;
                m.topic_totals[old] -= 1;
                m.doc_topic[d][old] -= 1;
                m.word_column(w, &mut col);
                let weights = conditional(&m.doc_topic[d], &col, &m.topic_totals, alpha, beta, vocab_size);
                let new = sample(&weights, &mut rng);
                m.topic_word[new * vocab_size + w] += 1;
                m.topic_totals[new] += 1;
                m.doc_topic[d][new] += 1;
                m.assignments[d][i] = new as u32;
            }
        }
        if sweep >= config.burn_in {
            samples += 1;
            for (d, doc) in docs.iter().enumerate() {
                let p = proportions(&m.doc_topic[d], doc.len(), alpha);
                for (acc, v) in m.doc_proportions[d].iter_mut().zip(p) {
                    *acc += v;
                }
            }
        }
        after_sweep(&m, sweep)?;
    }
    for (d, doc) in docs.iter().enumerate() {
        if samples == 0 {
            m.doc_proportions[d] = proportions(&m.doc_topic[d], doc.len(), alpha);
        } else {
            m.doc_proportions[d].iter_mut().for_each(|v| *v /= samples as f64);
        }
    }
    Ok(m)
}

/// Topic proportions of an unseen document with the fitted topic-word counts
/// held fixed. Out-of-range word indices are ignored; a document with no
/// usable tokens gets the uniform prior.
pub fn lda_infer(model: &TopicModel, doc: &[usize], iterations: usize, burn_in: usize, seed_value: u64) -> Vec<f64> {
    let k = model.topics;
    let doc: Vec<usize> = doc.iter().copied().filter(|&w| w < model.vocab_size).collect();
    if doc.is_empty() {
        return vec![1.0 / k as f64; k];
    }
    let mut rng = seed::rng(seed_value, &[0x1DB]);
    let mut dt = vec![0u32; k];
    let mut z: Vec<usize> = doc.iter().map(|_| rng.gen_range(0..k)).collect();
    z.iter().for_each(|&t| dt[t] += 1);
    let mut col = vec![0.0; k];
    let mut acc = vec![0.0; k];
    let mut samples = 0;
    for sweep in 0..iterations {
        for (i, &w) in doc.iter().enumerate() {
            dt[z[i]] -= 1;
            model.word_column(w, &mut col);
            let weights = conditional(&dt, &col, &model.topic_totals, model.alpha, model.beta, model.vocab_size);
            z[i] = sample(&weights, &mut rng);
            dt[z[i]] += 1;
        }
        if sweep >= burn_in {
            samples += 1;
            for (a, v) in acc.iter_mut().zip(proportions(&dt, doc.len(), model.alpha)) {
                *a += v;
            }
        }
    }
    if samples == 0 {
        return proportions(&dt, doc.len(), model.alpha);
    }
    let total: f64 = acc.iter().sum();
    acc.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two topics over disjoint halves of a 20-word vocabulary.
    fn planted(seed_value: u64) -> Vec<Vec<usize>> {
        let mut rng = seed::rng(seed_value, &[]);
        (0..60)
            .map(|d| {
                let base = if d % 2 == 0 { 0 } else { 10 };
                (0..30).map(|_| base + rng.gen_range(0..10)).collect()
            })
            .collect()
    }

    #[test]
    fn one_topic_is_forced() {
        let cfg = LdaConfig { topics: 1, iterations: 5, burn_in: 2, ..LdaConfig::default() };
        let m = lda_fit(&[vec![0, 1, 2], vec![2, 2]], 3, &cfg).unwrap();
        assert!(m.assignments.iter().flatten().all(|&z| z == 0));
        assert_eq!(m.doc_proportions[0], vec![1.0]);
    }

    #[test]
    fn counts_are_conserved_every_sweep() {
        let cfg = LdaConfig { topics: 4, iterations: 20, burn_in: 10, ..LdaConfig::default() };
        let docs = planted(1);
        let m = lda_fit_with(&docs, 20, &cfg, |m, _| {
            for (d, doc) in docs.iter().enumerate() {
                assert_eq!(m.doc_topic[d].iter().sum::<u32>() as usize, doc.len());
            }
            m.check_counts()
        })
        .unwrap();
        assert_eq!(m.alpha, 50.0 / 4.0);
        assert_eq!(m.beta, 200.0 / 20.0);
    }

    #[test]
    fn recovers_planted_topics() {
        let cfg = LdaConfig { topics: 2, alpha: Some(0.5), beta: Some(0.1), iterations: 200, burn_in: 100, ..LdaConfig::default() };
        let m = lda_fit(&planted(2), 20, &cfg).unwrap();
        let sets: Vec<Vec<usize>> = (0..2).map(|k| m.top_words(k, 10)).collect();
        let overlap = |s: &[usize], base: usize| s.iter().filter(|&&w| (base..base + 10).contains(&w)).count();
        let direct = overlap(&sets[0], 0) + overlap(&sets[1], 10);
        let swapped = overlap(&sets[0], 10) + overlap(&sets[1], 0);
        assert!(direct.max(swapped) >= 18);
    }

    #[test]
    fn inference_behaviour() {
        let cfg = LdaConfig { topics: 2, alpha: Some(0.5), beta: Some(0.1), iterations: 50, burn_in: 25, ..LdaConfig::default() };
        let m = lda_fit(&planted(3), 20, &cfg).unwrap();
        let before = m.fingerprint();
        let p = lda_infer(&m, &[1, 2, 3, 4], 30, 10, 5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.fingerprint(), before);
        assert_eq!(lda_infer(&m, &[], 30, 10, 5), vec![0.5, 0.5]);
        assert_eq!(lda_infer(&m, &[99], 30, 10, 5), vec![0.5, 0.5]);
        assert_eq!(p, lda_infer(&m, &[1, 2, 3, 4], 30, 10, 5));
    }

    #[test]
    fn single_word_lands_in_its_topic() {
        // Word 0 belongs purely to topic 3.
        let mut m = TopicModel::read_from(std::io::Cursor::new("notecnn-lda 1\n5 2 0.1 0.01\n0 9\n0 9\n0 9\n50 0\n0 9\n")).unwrap();
        m.seed = 1;
        let p = lda_infer(&m, &[0], 20, 5, 0);
        let argmax = (0..5).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 3);
    }

    #[test]
    fn conditional_flattens_with_large_beta() {
        let dt = [2, 2, 2];
        let col = [10.0, 0.0, 3.0];
        let totals = [20, 15, 30];
        let w = conditional(&dt, &col, &totals, 0.1, 1e9, 50);
        let s: f64 = w.iter().sum();
        assert!(w.iter().all(|&v| (v / s - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn serialization_round_trip() {
        let cfg = LdaConfig { topics: 3, iterations: 4, burn_in: 2, ..LdaConfig::default() };
        let m = lda_fit(&planted(4), 20, &cfg).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = TopicModel::read_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.topic_word, m.topic_word);
        assert_eq!(back.topic_totals, m.topic_totals);
        assert_eq!((back.alpha, back.beta), (m.alpha, m.beta));
        assert!(TopicModel::read_from(std::io::Cursor::new("lda 2\n")).is_err());
    }
}
