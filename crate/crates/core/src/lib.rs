//! Two-level convolutional document classifier for ICU mortality prediction
//! from clinical notes.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: ingestion, cohort filtering, labels, tokenization,
//!   vocabulary, splits and a synthetic corpus generator.
//! - [`tensor`]: dense 64-bit tensors with hand-written forward/backward
//!   kernels, a finite-difference gradient checker and an Adam optimizer.
//! - [`wordvec`]: skip-gram word vectors with negative sampling.
//! - [`hiercnn`]: the word-level / sentence-level CNN with category
//!   embeddings and the target-replication objective.
//! - [`baselines`]: tf-idf vocabulary, collapsed Gibbs LDA, DBOW paragraph
//!   vectors and a Pegasos linear SVM.
//! - [`eval`]: rank-based AUC and report rendering.
//! - [`config`] and [`pipeline`]: the staged, file-based workflow behind the
//!   `notecnn` binary.

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hiercnn;
pub mod manifest;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod tensor;
pub mod wordvec;

pub use error::{Error, Result};
