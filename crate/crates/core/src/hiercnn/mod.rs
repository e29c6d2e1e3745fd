//! Word-level CNN → sentence vectors, category concatenation, sentence-level
//! CNN → patient vector, softmax mortality probability, and per-sentence
//! target replication.
//!
//! Each record is run through the network on its own, so no batch padding or
//! masking is needed: a sentence is right-padded with PAD to at least the
//! widest word filter, and the sentence sequence is right-padded with zero
//! vectors to at least the sentence filter width.

mod checkpoint;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{vocab::PAD, PatientRecord, CATEGORIES};
use crate::tensor::{
    bank_forward, conv1d_backward, conv1d_forward, cross_entropy, dense_backward, dense_forward,
    dropout, dropout_backward, max_pool_backward, max_pool_over_time, softmax,
    softmax_cross_entropy_grad, FilterBank, Tensor,
};
use crate::tensor::gradcheck::{relative_error, GradCheck};
use crate::{seed, Error, Result};

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, round_to_f32,
    save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub word_widths: Vec<usize>,
    pub word_filters: usize,
    pub n_categories: usize,
    pub category_dim: usize,
    pub sentence_width: usize,
    pub sentence_filters: usize,
}

impl ModelDims {
    pub fn new(vocab: usize) -> Self {
        ModelDims {
            vocab,
            word_dim: 50,
            word_widths: vec![3, 4, 5],
            word_filters: 50,
            n_categories: CATEGORIES.len(),
            category_dim: 10,
            sentence_width: 3,
            sentence_filters: 50,
        }
    }

    /// Sentence vector length.
    pub fn d_s(&self) -> usize {
        self.word_widths.len() * self.word_filters
    }

    /// Category-augmented sentence vector length.
    pub fn d_u(&self) -> usize {
        self.d_s() + self.category_dim
    }

    /// Patient vector length.
    pub fn d_p(&self) -> usize {
        self.sentence_filters
    }

    fn min_sentence_len(&self) -> usize {
        *self.word_widths.iter().max().unwrap_or(&1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `(vocab, word_dim)`; the PAD row stays zero.
    pub embeddings: Tensor,
    pub word_cnn: FilterBank,
    /// `(n_categories, category_dim)`
    pub categories: Tensor,
    pub sentence_cnn: FilterBank,
    /// `(2, d_p)`
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    /// `(2, d_u)`
    pub rep_w: Tensor,
    pub rep_b: Tensor,
}

fn glorot_dense<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (out + inp) as f64).sqrt();
    Tensor::uniform(&[out, inp], limit, rng)
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::validate_dims(&dims)?;
        Ok(ModelParams {
            embeddings: Tensor::zeros(&[dims.vocab, dims.word_dim]),
            word_cnn: FilterBank::zeros(&dims.word_widths, dims.word_filters, dims.word_dim)?,
            categories: Tensor::zeros(&[dims.n_categories, dims.category_dim]),
            sentence_cnn: FilterBank::zeros(&[dims.sentence_width], dims.sentence_filters, dims.d_u())?,
            dense_w: Tensor::zeros(&[2, dims.d_p()]),
            dense_b: Tensor::zeros(&[2]),
            rep_w: Tensor::zeros(&[2, dims.d_u()]),
            rep_b: Tensor::zeros(&[2]),
            dims,
        })
    }

    /// Random initialization: uniform embeddings and category vectors in
    /// ±0.1, Glorot-uniform filters and dense layers, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        Self::validate_dims(&dims)?;
        let mut rng = seed::rng(seed, &[0xC11]);
        let mut embeddings = Tensor::uniform(&[dims.vocab, dims.word_dim], 0.1, &mut rng);
        embeddings.row_mut(PAD).fill(0.0);
        Ok(ModelParams {
            embeddings,
            word_cnn: FilterBank::glorot(&dims.word_widths, dims.word_filters, dims.word_dim, &mut rng)?,
            categories: Tensor::uniform(&[dims.n_categories, dims.category_dim], 0.1, &mut rng),
            sentence_cnn: FilterBank::glorot(
                &[dims.sentence_width],
                dims.sentence_filters,
                dims.d_u(),
                &mut rng,
            )?,
            dense_w: glorot_dense(2, dims.d_p(), &mut rng),
            dense_b: Tensor::zeros(&[2]),
            rep_w: glorot_dense(2, dims.d_u(), &mut rng),
            rep_b: Tensor::zeros(&[2]),
            dims,
        })
    }

    fn validate_dims(dims: &ModelDims) -> Result<()> {
        if dims.vocab == 0 || dims.word_dim == 0 || dims.n_categories == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model dimensions {dims:?}")));
        }
        Ok(())
    }

    /// Replaces the embedding table, e.g. with pretrained vectors. The PAD
    /// row is forced to zero.
    pub fn set_embeddings(&mut self, mut embeddings: Tensor) -> Result<()> {
        if embeddings.shape() != self.embeddings.shape() {
            return Err(Error::Shape(format!(
                "embedding table {:?} does not match model {:?}",
                embeddings.shape(),
                self.embeddings.shape()
            )));
        }
        embeddings.row_mut(PAD).fill(0.0);
        self.embeddings = embeddings;
        Ok(())
    }

    /// Every parameter tensor in canonical order (embeddings first). The
    /// checkpoint body and [`Gradients::to_dense`] use the same order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embeddings];
        v.extend(self.non_embedding_tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelParams {
            embeddings,
            word_cnn,
            categories,
            sentence_cnn,
            dense_w,
            dense_b,
            rep_w,
            rep_b,
            ..
        } = self;
        let mut v = vec![embeddings];
        v.extend(word_cnn.filters.iter_mut());
        v.extend(word_cnn.biases.iter_mut());
        v.push(categories);
        v.extend(sentence_cnn.filters.iter_mut());
        v.extend(sentence_cnn.biases.iter_mut());
        v.extend([dense_w, dense_b, rep_w, rep_b]);
        v
    }

    fn non_embedding_tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        v.extend(self.word_cnn.filters.iter());
        v.extend(self.word_cnn.biases.iter());
        v.push(&self.categories);
        v.extend(self.sentence_cnn.filters.iter());
        v.extend(self.sentence_cnn.biases.iter());
        v.extend([&self.dense_w, &self.dense_b, &self.rep_w, &self.rep_b]);
        v
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Parameter gradients. Embedding gradients are kept as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    /// Same order as the non-embedding part of [`ModelParams::tensors`].
    pub dense: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            dense: params
                .non_embedding_tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (&row, g) in &other.embeddings {
            let dst = self
                .embeddings
                .entry(row)
                .or_insert_with(|| vec![0.0; g.len()]);
            crate::tensor::axpy(scale, g, dst);
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            crate::tensor::axpy(scale, b.data(), a.data_mut());
        }
    }

    /// Full gradient tensors in [`ModelParams::tensors`] order.
    pub fn to_dense(&self, params: &ModelParams) -> Vec<Tensor> {
        let mut emb = Tensor::zeros(params.embeddings.shape());
        for (&row, g) in &self.embeddings {
            emb.row_mut(row).copy_from_slice(g);
        }
        let mut v = vec![emb];
        v.extend(self.dense.iter().cloned());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.values().flatten().all(|v| v.is_finite())
            && self.dense.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Output of the forward pass for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Probability of the positive (death) class.
    pub p_doc: f64,
    /// Both class probabilities of the document softmax.
    pub doc_probs: [f64; 2],
    /// Per-sentence replication probabilities of the positive class.
    pub p_sentences: Vec<f64>,
    /// Patient vector `x`.
    pub patient_vector: Vec<f64>,
    /// Sentence vectors `x_i` (before category concatenation).
    pub sentence_vectors: Vec<Vec<f64>>,
}

/// Dropout setting for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Inference,
    Train { keep_prob: f64, seed: u64 },
}

struct SentenceCache {
    tokens: Vec<usize>,
    seq: Tensor,
    maps: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
}

struct ForwardCache {
    sentences: Vec<SentenceCache>,
    categories: Vec<usize>,
    u: Vec<Vec<f64>>,
    sent_seq: Tensor,
    sent_map: Tensor,
    sent_arg: Vec<usize>,
    x: Vec<f64>,
    x_drop: Vec<f64>,
    mask: Vec<f64>,
    doc_probs: Vec<f64>,
    rep_probs: Vec<Vec<f64>>,
}

fn padded_tokens(tokens: &[usize], dims: &ModelDims) -> Result<Vec<usize>> {
    if let Some(&bad) = tokens.iter().find(|&&t| t >= dims.vocab) {
        return Err(Error::Data(format!(
            "token index {bad} outside the model vocabulary of {}",
            dims.vocab
        )));
    }
    let mut out = tokens.to_vec();
    out.resize(tokens.len().max(dims.min_sentence_len()), PAD);
    Ok(out)
}

fn encode_sentence_cached(tokens: &[usize], params: &ModelParams) -> Result<(Vec<f64>, SentenceCache)> {
    let dims = &params.dims;
    let tokens = padded_tokens(tokens, dims)?;
    let mut seq = Tensor::zeros(&[tokens.len(), dims.word_dim]);
    for (i, &t) in tokens.iter().enumerate() {
        seq.row_mut(i).copy_from_slice(params.embeddings.row(t));
    }
    let maps = bank_forward(&seq, &params.word_cnn)?;
    let mut x = Vec::with_capacity(dims.d_s());
    let mut argmax = Vec::with_capacity(maps.len());
    for map in &maps {
        let (pooled, arg) = max_pool_over_time(map)?;
        x.extend(pooled);
        argmax.push(arg);
    }
    Ok((x, SentenceCache { tokens, seq, maps, argmax }))
}

/// Sentence vector `x_i` (length `D_S`) for a token-index sequence.
pub fn encode_sentence(tokens: &[usize], params: &ModelParams) -> Result<Vec<f64>> {
    encode_sentence_cached(tokens, params).map(|(x, _)| x)
}

/// `[x_i ; z_category]`
pub fn attach_category(x: &[f64], category: usize, params: &ModelParams) -> Result<Vec<f64>> {
    if category >= params.dims.n_categories {
        return Err(Error::InvalidArgument(format!(
            "category id {category} outside [0, {})",
            params.dims.n_categories
        )));
    }
    if x.len() != params.dims.d_s() {
        return Err(Error::Shape(format!(
            "sentence vector of length {} (expected {})",
            x.len(),
            params.dims.d_s()
        )));
    }
    let mut u = x.to_vec();
    u.extend_from_slice(params.categories.row(category));
    Ok(u)
}

fn sentence_sequence(u: &[Vec<f64>], params: &ModelParams) -> Result<Tensor> {
    let d_u = params.dims.d_u();
    if u.is_empty() {
        return Err(Error::Data("patient record has no sentences".into()));
    }
    let rows = u.len().max(params.dims.sentence_width);
    let mut seq = Tensor::zeros(&[rows, d_u]);
    for (i, v) in u.iter().enumerate() {
        if v.len() != d_u {
            return Err(Error::Shape(format!("sentence input of length {} (expected {d_u})", v.len())));
        }
        seq.row_mut(i).copy_from_slice(v);
    }
    Ok(seq)
}

/// Patient vector `x` (length `D_P`) from category-augmented sentence
/// vectors, in record order.
pub fn encode_patient(u: &[Vec<f64>], params: &ModelParams) -> Result<Vec<f64>> {
    let seq = sentence_sequence(u, params)?;
    let map = conv1d_forward(&seq, &params.sentence_cnn.filters[0], &params.sentence_cnn.biases[0])?;
    Ok(max_pool_over_time(&map)?.0)
}

fn forward(record: &PatientRecord, params: &ModelParams, mode: Mode) -> Result<ForwardCache> {
    if record.sentences.is_empty() {
        return Err(Error::Data(format!("record {} has no sentences", record.patient_id)));
    }
    let mut sentences = Vec::with_capacity(record.sentences.len());
    let mut categories = Vec::with_capacity(record.sentences.len());
    let mut u = Vec::with_capacity(record.sentences.len());
    for s in &record.sentences {
        let (x, cache) = encode_sentence_cached(&s.tokens, params)?;
        u.push(attach_category(&x, s.category, params)?);
        sentences.push(cache);
        categories.push(s.category);
    }
    let sent_seq = sentence_sequence(&u, params)?;
    let sent_map = conv1d_forward(
        &sent_seq,
        &params.sentence_cnn.filters[0],
        &params.sentence_cnn.biases[0],
    )?;
    let (x, sent_arg) = max_pool_over_time(&sent_map)?;
    let (x_drop, mask) = match mode {
        Mode::Inference => dropout(&x, 1.0, 0, false)?,
        Mode::Train { keep_prob, seed } => dropout(&x, keep_prob, seed, true)?,
    };
    let doc_probs = softmax(&dense_forward(&x_drop, &params.dense_w, &params.dense_b)?);
    let rep_probs = u
        .iter()
        .map(|ui| dense_forward(ui, &params.rep_w, &params.rep_b).map(|l| softmax(&l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardCache {
        sentences,
        categories,
        u,
        sent_seq,
        sent_map,
        sent_arg,
        x,
        x_drop,
        mask,
        doc_probs,
        rep_probs,
    })
}

/// Inference-mode forward pass (no dropout).
pub fn predict(record: &PatientRecord, params: &ModelParams) -> Result<Prediction> {
    let c = forward(record, params, Mode::Inference)?;
    let d_s = params.dims.d_s();
    Ok(Prediction {
        p_doc: c.doc_probs[1],
        doc_probs: [c.doc_probs[0], c.doc_probs[1]],
        p_sentences: c.rep_probs.iter().map(|p| p[1]).collect(),
        patient_vector: c.x,
        sentence_vectors: c.u.iter().map(|u| u[..d_s].to_vec()).collect(),
    })
}

/// `doc + lambda * mean(sentences)`; with `lambda = 0` the result is `doc`
/// exactly.
pub fn replicated_objective(doc: f64, sentences: &[f64], lambda: f64) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Data("replication term over zero sentences".into()));
    }
    let mean = sentences.iter().sum::<f64>() / sentences.len() as f64;
    Ok(doc + lambda * mean)
}

fn loss_from_cache(c: &ForwardCache, target: usize, lambda: f64) -> Result<f64> {
    let doc = cross_entropy(&c.doc_probs, target)?;
    let rep = c
        .rep_probs
        .iter()
        .map(|p| cross_entropy(p, target))
        .collect::<Result<Vec<_>>>()?;
    replicated_objective(doc, &rep, lambda)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Per-record objective: document cross entropy plus `lambda` times the mean
/// sentence-level replication cross entropy. The l2 term is not included; it
/// belongs to [`corpus_loss`].
pub fn patient_loss(record: &PatientRecord, label: bool, params: &ModelParams, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let c = forward(record, params, Mode::Inference)?;
    loss_from_cache(&c, usize::from(label), lambda)
}

/// `l2 * ||dense_w||^2`
pub fn l2_term(params: &ModelParams, l2: f64) -> f64 {
    l2 * params.dense_w.sum_squares()
}

/// Sum of [`patient_loss`] over the dataset plus the l2 term on the final
/// dense weights.
pub fn corpus_loss(data: &[(PatientRecord, bool)], params: &ModelParams, lambda: f64, l2: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("corpus loss over an empty dataset".into()));
    }
    let mut total = 0.0;
    for (r, y) in data {
        total += patient_loss(r, *y, params, lambda)?;
    }
    Ok(total + l2_term(params, l2))
}

/// Per-record objective (as [`patient_loss`], under `mode`) and its gradient
/// with respect to every parameter. The PAD embedding row never receives a
/// gradient.
pub fn loss_and_gradients(
    record: &PatientRecord,
    label: bool,
    params: &ModelParams,
    lambda: f64,
    mode: Mode,
) -> Result<(f64, Gradients)> {
    check_lambda(lambda)?;
    let c = forward(record, params, mode)?;
    let target = usize::from(label);
    let loss = loss_from_cache(&c, target, lambda)?;
    let dims = &params.dims;
    let (d_s, d_u) = (dims.d_s(), dims.d_u());

    let mut grads = Gradients::zeros(params);
    let nw = params.word_cnn.widths().len();
    // Index layout of `grads.dense`.
    let (wf, wb, cat, sf, sb) = (0, nw, 2 * nw, 2 * nw + 1, 2 * nw + 2);
    let (dw, db, rw, rb) = (2 * nw + 3, 2 * nw + 4, 2 * nw + 5, 2 * nw + 6);

    // Document head.
    let g_logits = softmax_cross_entropy_grad(&c.doc_probs, target);
    let (gw, gb) = pair_mut(&mut grads.dense, dw, db);
    let g_xdrop = dense_backward(&c.x_drop, &params.dense_w, &g_logits, gw, gb)?;
    let g_x = dropout_backward(&g_xdrop, &c.mask);

    // Sentence-level CNN.
    let (rows, _) = c.sent_map.dims2()?;
    let g_map = max_pool_backward(&g_x, &c.sent_arg, rows)?;
    let mut g_seq = Tensor::zeros(c.sent_seq.shape());
    {
        let (gf, gbias) = pair_mut(&mut grads.dense, sf, sb);
        conv1d_backward(
            &c.sent_seq,
            &params.sentence_cnn.filters[0],
            &c.sent_map,
            &g_map,
            Some(&mut g_seq),
            gf,
            gbias,
        )?;
    }

    // Replication heads.
    let n = c.u.len() as f64;
    for (i, (ui, pi)) in c.u.iter().zip(&c.rep_probs).enumerate() {
        let mut g = softmax_cross_entropy_grad(pi, target);
        g.iter_mut().for_each(|v| *v *= lambda / n);
        let (gw, gb) = pair_mut(&mut grads.dense, rw, rb);
        let g_u = dense_backward(ui, &params.rep_w, &g, gw, gb)?;
        crate::tensor::axpy(1.0, &g_u, g_seq.row_mut(i));
    }

    // Category vectors and word-level CNN.
    for (i, sc) in c.sentences.iter().enumerate() {
        let g_u = &g_seq.row(i)[..d_u];
        crate::tensor::axpy(1.0, &g_u[d_s..], grads.dense[cat].row_mut(c.categories[i]));
        let mut g_emb = Tensor::zeros(sc.seq.shape());
        for (k, (map, arg)) in sc.maps.iter().zip(&sc.argmax).enumerate() {
            let nf = params.word_cnn.n_filters();
            let g_pool = &g_u[k * nf..(k + 1) * nf];
            if g_pool.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (r, _) = map.dims2()?;
            let g_map = max_pool_backward(g_pool, arg, r)?;
            let (gf, gbias) = pair_mut(&mut grads.dense, wf + k, wb + k);
            conv1d_backward(
                &sc.seq,
                &params.word_cnn.filters[k],
                map,
                &g_map,
                Some(&mut g_emb),
                gf,
                gbias,
            )?;
        }
        for (pos, &tok) in sc.tokens.iter().enumerate() {
            if tok == PAD {
                continue;
            }
            let row = grads
                .embeddings
                .entry(tok)
                .or_insert_with(|| vec![0.0; dims.word_dim]);
            crate::tensor::axpy(1.0, g_emb.row(pos), row);
        }
    }
    Ok((loss, grads))
}

fn pair_mut(v: &mut [Tensor], a: usize, b: usize) -> (&mut Tensor, &mut Tensor) {
    debug_assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Compares [`loss_and_gradients`] (inference mode) against central
/// differences of [`patient_loss`] for every parameter value except the PAD
/// embedding row, which is frozen.
pub fn check_gradients(
    record: &PatientRecord,
    label: bool,
    params: &ModelParams,
    lambda: f64,
    eps: f64,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_gradients(record, label, params, lambda, Mode::Inference)?;
    let analytic = grads.to_dense(params);
    let mut probe = params.clone();
    let word_dim = params.dims.word_dim;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            if ti == 0 && k / word_dim == PAD {
                continue;
            }
            let orig = probe.tensors()[ti].data()[k];
            probe.tensors_mut()[ti].data_mut()[k] = orig + eps;
            let plus = patient_loss(record, label, &probe, lambda)?;
            probe.tensors_mut()[ti].data_mut()[k] = orig - eps;
            let minus = patient_loss(record, label, &probe, lambda)?;
            probe.tensors_mut()[ti].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(g.data()[k], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, checked })
}

/// A sentence index with its replication score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedSentence {
    pub index: usize,
    pub score: f64,
}

/// Sentences sorted by replication probability, highest first; ties keep
/// record order.
pub fn rank_sentences(record: &PatientRecord, params: &ModelParams) -> Result<Vec<RankedSentence>> {
    let pred = predict(record, params)?;
    let mut ranked: Vec<RankedSentence> = pred
        .p_sentences
        .iter()
        .enumerate()
        .map(|(index, &score)| RankedSentence { index, score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(ranked)
}
