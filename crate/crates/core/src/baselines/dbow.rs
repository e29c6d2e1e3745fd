//! Distributed-bag-of-words paragraph vectors: each document vector predicts
//! the document's words through negative sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::wordvec::sgns_loss_and_grads;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbowConfig {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly.
    pub rate: f64,
    pub infer_steps: usize,
    /// Set from the run-wide seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DbowConfig {
    fn default() -> Self {
        DbowConfig {
            dim: 400,
            negatives: 5,
            epochs: 10,
            rate: 0.025,
            infer_steps: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DbowModel {
    pub config: DbowConfig,
    /// `(documents, dim)`
    pub doc_vectors: Tensor,
    /// `(vocab, dim)` output word vectors.
    pub word_vectors: Tensor,
    noise: WeightedIndex<f64>,
}

fn init_vector(dim: usize, seed_value: u64, doc: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_value, &[0xDB0, doc]);
    (0..dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect()
}

fn draw<R: Rng>(noise: &WeightedIndex<f64>, rng: &mut R, avoid: usize) -> usize {
    loop {
        let n = noise.sample(rng);
        if n != avoid {
            return n;
        }
    }
}

/// One negative-sampling step for `(doc vector, word)`; updates the word
/// side only when `words` is given.
fn step(d: &mut [f64], words: &mut Tensor, update_words: bool, w: usize, negs: &[usize], rate: f64) {
    let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| words.row(n)).collect();
    let (_, g) = sgns_loss_and_grads(d, words.row(w), &neg_rows);
    if update_words {
        for (v, gv) in words.row_mut(w).iter_mut().zip(&g.context) {
            *v -= rate * gv;
        }
        for (&n, gn) in negs.iter().zip(&g.negatives) {
            for (v, gv) in words.row_mut(n).iter_mut().zip(gn) {
                *v -= rate * gv;
            }
        }
    }
    for (v, gv) in d.iter_mut().zip(&g.center) {
        *v -= rate * gv;
    }
}

/// Trains one vector per document. Deterministic for a given seed.
pub fn dbow_fit(docs: &[Vec<usize>], vocab_size: usize, config: &DbowConfig) -> Result<DbowModel> {
    if config.dim == 0 {
        return Err(Error::InvalidArgument("DBOW dimension must be positive".into()));
    }
    if let Some(i) = docs.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("DBOW document {i} is empty")));
    }
    if docs.is_empty() {
        return Err(Error::Data("DBOW over an empty corpus".into()));
    }
    let mut counts = vec![0f64; vocab_size];
    for &w in docs.iter().flatten() {
        *counts
            .get_mut(w)
            .ok_or_else(|| Error::Data(format!("word index {w} outside vocabulary of {vocab_size}")))? += 1.0;
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
        .map_err(|e| Error::Data(format!("DBOW noise distribution: {e}")))?;

    let dim = config.dim;
    let mut doc_vectors = Tensor::zeros(&[docs.len(), dim]);
    for d in 0..docs.len() {
        doc_vectors.row_mut(d).copy_from_slice(&init_vector(dim, config.seed, d as u64));
    }
    let mut word_vectors = Tensor::zeros(&[vocab_size, dim]);
    let total = (docs.iter().map(Vec::len).sum::<usize>() * config.epochs) as f64;
    let mut seen = 0usize;
    let mut negs = vec![0; config.negatives];
    let mut order: Vec<usize> = (0..docs.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = seed::rng(config.seed, &[0xDB1, epoch as u64]);
        order.shuffle(&mut rng);
        for &d in &order {
            let mut dv = doc_vectors.row(d).to_vec();
            for &w in &docs[d] {
                let rate = config.rate * (1.0 - seen as f64 / total).max(1e-4);
                for n in negs.iter_mut() {
                    *n = draw(&noise, &mut rng, w);
                }
                step(&mut dv, &mut word_vectors, true, w, &negs, rate);
                seen += 1;
            }
            doc_vectors.row_mut(d).copy_from_slice(&dv);
        }
    }
    doc_vectors.check_finite("DBOW document vectors")?;
    Ok(DbowModel {
        config: config.clone(),
        doc_vectors,
        word_vectors,
        noise,
    })
}

/// Fits a vector for an unseen document with the word vectors frozen.
/// `steps = 0` returns the seeded initialization.
pub fn dbow_infer(model: &DbowModel, doc: &[usize], steps: usize, seed_value: u64) -> Result<Vec<f64>> {
    let vocab = model.word_vectors.shape()[0];
    let doc: Vec<usize> = doc.iter().copied().filter(|&w| w < vocab).collect();
    if doc.is_empty() {
        return Err(Error::Data("DBOW inference on an empty document".into()));
    }
    let mut dv = init_vector(model.config.dim, seed_value, u64::MAX);
    let mut words = model.word_vectors.clone();
    let mut rng = seed::rng(seed_value, &[0xDB2]);
    let mut negs = vec![0; model.config.negatives];
    let total = (doc.len() * steps) as f64;
    let mut seen = 0usize;
    for _ in 0..steps {
        for &w in &doc {
            let rate = model.config.rate * (1.0 - seen as f64 / total).max(1e-4);
            for n in negs.iter_mut() {
                *n = draw(&model.noise, &mut rng, w);
            }
            step(&mut dv, &mut words, false, w, &negs, rate);
            seen += 1;
        }
    }
    Ok(dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    fn corpus() -> Vec<Vec<usize>> {
        let mut rng = seed::rng(5, &[]);
        (0..40)
            .map(|d| {
                let base = (d % 4) * 10;
                (0..40).map(|_| base + rng.gen_range(0..10)).collect()
            })
            .collect()
    }

    #[test]
    fn shapes_and_zero_epochs() {
        let docs = corpus();
        let cfg = DbowConfig { epochs: 0, ..DbowConfig::default() };
        let m = dbow_fit(&docs, 40, &cfg).unwrap();
        assert_eq!(m.doc_vectors.shape(), &[40, 400]);
        assert_eq!(m.doc_vectors.row(3), &init_vector(400, 0, 3)[..]);
        assert!(dbow_fit(&[vec![]], 40, &cfg).is_err());
    }

    #[test]
    fn near_duplicates_are_closer_than_disjoint() {
        let docs = corpus();
        let cfg = DbowConfig { dim: 20, epochs: 20, ..DbowConfig::default() };
        let m = dbow_fit(&docs, 40, &cfg).unwrap();
        let v = &m.doc_vectors;
        // Documents 0 and 4 share a word set; 1 uses a disjoint one.
        assert!(cosine(v.row(0), v.row(4)) > cosine(v.row(0), v.row(1)));
    }

    /// 20 documents, each mixing 5 private words with 5 shared ones.
    fn distinct_corpus() -> Vec<Vec<usize>> {
        let mut rng = seed::rng(6, &[]);
        (0..20)
            .map(|d| {
                (0..40)
                    .map(|i| if i % 2 == 0 { 5 + d * 5 + rng.gen_range(0..5) } else { rng.gen_range(0..5) })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn inference_retrieves_itself_and_is_deterministic() {
        let docs = distinct_corpus();
        let cfg = DbowConfig { dim: 20, epochs: 30, ..DbowConfig::default() };
        let m = dbow_fit(&docs, 105, &cfg).unwrap();
        for target in [0, 7, 13] {
            let v = dbow_infer(&m, &docs[target], 40, 1).unwrap();
            let own = cosine(&v, m.doc_vectors.row(target));
            let beaten = (0..docs.len())
                .filter(|&d| d != target && cosine(&v, m.doc_vectors.row(d)) >= own)
                .count();
            assert!(beaten as f64 <= 0.05 * (docs.len() - 1) as f64, "doc {target} beaten by {beaten}");
        }
        let v = dbow_infer(&m, &docs[7], 40, 1).unwrap();
        assert_eq!(v, dbow_infer(&m, &docs[7], 40, 1).unwrap());
        assert_eq!(dbow_infer(&m, &docs[7], 0, 3).unwrap(), init_vector(20, 3, u64::MAX));
        assert!(dbow_infer(&m, &[], 5, 1).is_err());
    }
}
