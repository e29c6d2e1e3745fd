//! Skip-gram word vectors trained with negative sampling, and the plain-text
//! vector file format shared with document vectors.
//!
//! File layout: a `rows dim` header line, then one line per row holding the
//! row name followed by `dim` reals. Values are written as the shortest
//! decimal that round-trips the 32-bit float.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::PAD;
use crate::corpus::Vocabulary;
use crate::tensor::Tensor;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `rate * 1e-4`.
    pub rate: f64,
    /// Set from the run-wide seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 50,
            window: 5,
            negatives: 5,
            epochs: 5,
            rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    /// `(vocab, dim)` input vectors; the PAD row is zero.
    pub embeddings: Tensor,
    /// Mean objective per (center, context) pair on a fixed negative sample,
    /// before training and after each epoch.
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(x)`, stable for large `|x|`.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Gradients of the negative-sampling objective for one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGrads {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `-ln σ(w·c) - Σ_n ln σ(-w·c_n)` and its gradient with respect to the
/// center vector `w`, the context vector `c` and every negative vector `c_n`.
pub fn sgns_loss_and_grads(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (f64, SgnsGrads) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s = dot(center, context);
    let mut loss = neg_log_sigmoid(s);
    let g_pos = sigmoid(s) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|c| g_pos * c).collect();
    let g_context: Vec<f64> = center.iter().map(|w| g_pos * w).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        for (gc, nv) in g_center.iter_mut().zip(n.iter()) {
            *gc += g * nv;
        }
        g_negs.push(center.iter().map(|w| g * w).collect());
    }
    (
        loss,
        SgnsGrads {
            center: g_center,
            context: g_context,
            negatives: g_negs,
        },
    )
}

/// Draws negatives from the unigram distribution raised to 0.75.
struct NegativeTable {
    dist: WeightedIndex<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Data(format!("negative sampling table: {e}")))?;
        Ok(NegativeTable { dist })
    }

    fn draw<R: Rng>(&self, rng: &mut R, avoid: usize) -> usize {
        loop {
            let n = self.dist.sample(rng);
            if n != avoid {
                return n;
            }
        }
    }
}

fn pairs_in(sentence: &[usize], window: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    sentence.iter().enumerate().flat_map(move |(i, &c)| {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(sentence.len());
        (lo..hi)
            .filter(move |&j| j != i)
            .map(move |j| (c, sentence[j]))
            .filter(|&(c, o)| c != PAD && o != PAD)
    })
}

struct Model {
    input: Tensor,
    output: Tensor,
    dim: usize,
}

impl Model {
    fn pair_loss(&self, c: usize, o: usize, negs: &[usize]) -> f64 {
        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| self.output.row(n)).collect();
        sgns_loss_and_grads(self.input.row(c), self.output.row(o), &neg_rows).0
    }

    fn update(&mut self, c: usize, o: usize, negs: &[usize], rate: f64) {
        let neg_rows: Vec<&[f64]> = negs.iter().map(|&n| self.output.row(n)).collect();
        let (_, g) = sgns_loss_and_grads(self.input.row(c), self.output.row(o), &neg_rows);
        for (v, d) in self.output.row_mut(o).iter_mut().zip(&g.context) {
            *v -= rate * d;
        }
        for (&n, gn) in negs.iter().zip(&g.negatives) {
            for (v, d) in self.output.row_mut(n).iter_mut().zip(gn) {
                *v -= rate * d;
            }
        }
        for (v, d) in self.input.row_mut(c).iter_mut().zip(&g.center) {
            *v -= rate * d;
        }
        debug_assert_eq!(g.center.len(), self.dim);
    }
}

/// Random initial vectors: uniform in `±0.5 / dim`, PAD row zero.
pub fn initial_embeddings(vocab_size: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = seed::rng(seed, &[0x3EC]);
    let mut t = Tensor::uniform(&[vocab_size, dim], 0.5 / dim as f64, &mut rng);
    if vocab_size > PAD {
        t.row_mut(PAD).fill(0.0);
    }
    t
}

/// Trains input vectors over token-index sentences. Single-threaded and
/// deterministic for a given seed.
pub fn pretrain(sentences: &[Vec<usize>], vocab_size: usize, config: &SgnsConfig) -> Result<Pretrained> {
    if config.dim == 0 || config.window == 0 {
        return Err(Error::InvalidArgument("word vector dim and window must be positive".into()));
    }
    let mut counts = vec![0u64; vocab_size];
    for &t in sentences.iter().flatten() {
        let slot = counts.get_mut(t).ok_or_else(|| {
            Error::Data(format!("token index {t} outside vocabulary of {vocab_size}"))
        })?;
        if t != PAD {
            *slot += 1;
        }
    }
    let total_pairs: usize = sentences.iter().map(|s| pairs_in(s, config.window).count()).sum();
    if total_pairs == 0 {
        return Err(Error::Data("word vector corpus has no (center, context) pairs".into()));
    }
    let table = NegativeTable::new(&counts)?;
    let mut model = Model {
        input: initial_embeddings(vocab_size, config.dim, config.seed),
        output: Tensor::zeros(&[vocab_size, config.dim]),
        dim: config.dim,
    };

    // Fixed negatives for the loss history, so epochs are comparable.
    let mut eval_rng = seed::rng(config.seed, &[0xE7A1]);
    let eval_negs: Vec<Vec<usize>> = sentences
        .iter()
        .flat_map(|s| pairs_in(s, config.window))
        .map(|(_, o)| (0..config.negatives).map(|_| table.draw(&mut eval_rng, o)).collect())
        .collect();
    let history_point = |m: &Model| {
        let total: f64 = sentences
            .iter()
            .flat_map(|s| pairs_in(s, config.window))
            .zip(&eval_negs)
            .map(|((c, o), negs)| m.pair_loss(c, o, negs))
            .sum();
        total / total_pairs as f64
    };

    let mut loss_history = vec![history_point(&model)];
    let schedule_len = (total_pairs * config.epochs) as f64;
    let mut seen = 0usize;
    let mut negs = vec![0usize; config.negatives];
    for epoch in 0..config.epochs {
        let mut rng = seed::rng(config.seed, &[0x5C9, epoch as u64]);
        for s in sentences {
            for (c, o) in pairs_in(s, config.window) {
                let rate = config.rate * (1.0 - seen as f64 / schedule_len).max(1e-4);
                for n in negs.iter_mut() {
                    *n = table.draw(&mut rng, o);
                }
                model.update(c, o, &negs, rate);
                seen += 1;
            }
        }
        let loss = history_point(&model);
        log::info!("word vectors epoch {}: mean pair loss {loss:.5}", epoch + 1);
        loss_history.push(loss);
    }
    model.input.check_finite("word vectors")?;
    Ok(Pretrained {
        embeddings: model.input,
        loss_history,
    })
}

/// Writes named rows in the vector file format.
pub fn write_vectors<W: Write>(mut w: W, names: &[String], matrix: &Tensor) -> Result<()> {
    let (rows, dim) = matrix.dims2()?;
    if names.len() != rows {
        return Err(Error::Shape(format!("{} names for {rows} rows", names.len())));
    }
    let io = |e| Error::io("<vector stream>", e);
    writeln!(w, "{rows} {dim}").map_err(io)?;
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Data(format!("row name {name:?} cannot be written")));
        }
        let mut line = name.clone();
        for &v in matrix.row(i) {
            line.push(' ');
            line.push_str(&(v as f32).to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a vector file back into names and a `(rows, dim)` matrix.
pub fn read_vectors<R: BufRead>(r: R) -> Result<(Vec<String>, Tensor)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty vector file".into()))?
        .map_err(|e| Error::io("<vector stream>", e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Data(format!("bad vector file header {header:?}")))?;
    let [rows, dim] = dims[..] else {
        return Err(Error::Data(format!("bad vector file header {header:?}")));
    };
    let mut names = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<vector stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let name = parts.next().unwrap_or_default().to_string();
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("vector file line {}: bad number", i + 2)))?;
        if values.len() != dim {
            return Err(Error::Data(format!(
                "vector file line {}: {} values, header says {dim}",
                i + 2,
                values.len()
            )));
        }
        names.push(name);
        data.extend(values);
    }
    if names.len() != rows {
        return Err(Error::Data(format!("vector file has {} rows, header says {rows}", names.len())));
    }
    Ok((names, Tensor::from_vec(&[rows, dim], data)?))
}

pub fn save_embeddings(path: &Path, vocab: &Vocabulary, matrix: &Tensor) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_vectors(BufWriter::new(f), vocab.tokens(), matrix)
}

/// Loads an embedding file and checks its rows against `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<Tensor> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (names, matrix) = read_vectors(BufReader::new(f))?;
    if names.len() != vocab.len() {
        return Err(Error::Data(format!(
            "{}: {} rows but the vocabulary has {} entries",
            path.display(),
            names.len(),
            vocab.len()
        )));
    }
    if let Some(i) = (0..names.len()).find(|&i| names[i] != vocab.tokens()[i]) {
        return Err(Error::Data(format!(
            "{}: row {i} is {:?}, vocabulary has {:?}",
            path.display(),
            names[i],
            vocab.tokens()[i]
        )));
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{max_relative_error, numeric_gradient, EPSILON};

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    /// Tokens 2 and 3 always co-occur; 4 only appears with filler 5..9.
    fn micro_corpus() -> Vec<Vec<usize>> {
        (0..200)
            .map(|i| {
                if i % 2 == 0 {
                    vec![2, 3, 5 + i % 3]
                } else {
                    vec![4, 8 + i % 2, 7]
                }
            })
            .collect()
    }

    #[test]
    fn co_occurring_tokens_end_up_closer() {
        let cfg = SgnsConfig { dim: 10, epochs: 10, window: 2, ..SgnsConfig::default() };
        let out = pretrain(&micro_corpus(), 10, &cfg).unwrap();
        let e = &out.embeddings;
        assert!(cosine(e.row(2), e.row(3)) > cosine(e.row(2), e.row(4)));
        assert!(e.row(PAD).iter().all(|&v| v == 0.0));
        assert!((2..10).all(|t| e.row(t).iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let cfg = SgnsConfig { epochs: 0, seed: 4, ..SgnsConfig::default() };
        let out = pretrain(&micro_corpus(), 10, &cfg).unwrap();
        assert_eq!(out.embeddings, initial_embeddings(10, 50, 4));
        assert_eq!(out.embeddings.shape(), &[10, 50]);
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        for seed in 0..3 {
            let cfg = SgnsConfig { dim: 8, epochs: 6, rate: 0.01, window: 2, seed, ..SgnsConfig::default() };
            let a = pretrain(&micro_corpus(), 10, &cfg).unwrap();
            let b = pretrain(&micro_corpus(), 10, &cfg).unwrap();
            assert_eq!(a.embeddings, b.embeddings);
            assert!(a.loss_history.windows(2).all(|w| w[1] < w[0]), "{:?}", a.loss_history);
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(pretrain(&[], 10, &SgnsConfig::default()).is_err());
        assert!(pretrain(&[vec![2]], 10, &SgnsConfig::default()).is_err());
        assert!(pretrain(&[vec![2, 11]], 10, &SgnsConfig::default()).is_err());
    }

    #[test]
    fn triple_gradient_matches_finite_differences() {
        let mut rng = seed::rng(9, &[]);
        let v: Vec<f64> = (0..4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |x: &[f64]| {
            let negs: Vec<&[f64]> = vec![&x[12..18], &x[18..24]];
            sgns_loss_and_grads(&x[0..6], &x[6..12], &negs).0
        };
        let negs: Vec<&[f64]> = vec![&v[12..18], &v[18..24]];
        let (_, g) = sgns_loss_and_grads(&v[0..6], &v[6..12], &negs);
        let mut analytic = g.center.clone();
        analytic.extend(&g.context);
        g.negatives.iter().for_each(|n| analytic.extend(n));
        let numeric = numeric_gradient(loss, &v, EPSILON);
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn file_round_trip_and_format() {
        let vocab = Vocabulary::from_tokens(["alpha".to_string(), "beta".to_string()]).unwrap();
        let m = initial_embeddings(vocab.len(), 50, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        save_embeddings(&path, &vocab, &m).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "4 50");
        let row = lines.nth(2).unwrap();
        assert!(row.starts_with("alpha "));
        assert_eq!(row.split(' ').count(), 51);

        let back = load_embeddings(&path, &vocab).unwrap();
        let stored: Vec<f64> = m.data().iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.data(), &stored[..]);

        let other = Vocabulary::from_tokens(["alpha".to_string()]).unwrap();
        assert!(load_embeddings(&path, &other).is_err());
        let renamed = Vocabulary::from_tokens(["alpha".to_string(), "gamma".to_string()]).unwrap();
        assert!(load_embeddings(&path, &renamed).is_err());
    }
}
