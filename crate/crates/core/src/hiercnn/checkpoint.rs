//! Binary checkpoint format, all integers and reals little-endian:
//!
//! ```text
//! magic        8 bytes  "NOTECNN\0"
//! version      u32
//! dims         u32 x 6  vocab, word_dim, D_S, category_dim, D_P, n_categories
//! word widths  u32 count, then u32 per width
//! word filters u32      filters per width
//! sent width   u32
//! vocab hash   u64
//! config       u32 length, then that many bytes of JSON
//! body         f32 per value, tensors in ModelParams::tensors order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelDims, ModelParams};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"NOTECNN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_hash: u64,
    /// Free-form JSON describing how the model was trained.
    pub config_json: String,
}

impl Checkpoint {
    /// The six header dimensions: vocab, word dim, D_S, category dim, D_P,
    /// category count.
    pub fn header_dims(&self) -> [usize; 6] {
        let d = &self.params.dims;
        [d.vocab, d.word_dim, d.d_s(), d.category_dim, d.d_p(), d.n_categories]
    }

    pub fn check_vocab_hash(&self, expected: u64) -> Result<()> {
        if self.vocab_hash != expected {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {:016x} does not match expected {expected:016x}",
                self.vocab_hash
            )));
        }
        Ok(())
    }
}

fn u32_of(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Checkpoint(format!("value {v} does not fit the header")))
}

pub fn encode(params: &ModelParams, vocab_hash: u64, config_json: &str) -> Result<Vec<u8>> {
    let d = &params.dims;
    let mut out = Vec::with_capacity(64 + 4 * params.n_values());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [d.vocab, d.word_dim, d.d_s(), d.category_dim, d.d_p(), d.n_categories] {
        out.extend_from_slice(&u32_of(v)?);
    }
    out.extend_from_slice(&u32_of(d.word_widths.len())?);
    for &w in &d.word_widths {
        out.extend_from_slice(&u32_of(w)?);
    }
    out.extend_from_slice(&u32_of(d.word_filters)?);
    out.extend_from_slice(&u32_of(d.sentence_width)?);
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.extend_from_slice(&u32_of(config_json.len())?);
    out.extend_from_slice(config_json.as_bytes());
    for t in params.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, vocab_hash: u64, config_json: &str) -> Result<()> {
    let bytes = encode(params, vocab_hash, config_json)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let [vocab, word_dim, d_s, category_dim, d_p, n_categories] =
        [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let n_widths = r.u32()?;
    if n_widths == 0 || n_widths > 64 {
        return Err(Error::Checkpoint(format!("implausible width count {n_widths}")));
    }
    let word_widths = (0..n_widths).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let word_filters = r.u32()?;
    let sentence_width = r.u32()?;
    let vocab_hash = r.u64()?;
    let config_len = r.u32()?;
    let config_json = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config blob is not UTF-8".into()))?;

    let dims = ModelDims {
        vocab,
        word_dim,
        word_widths,
        word_filters,
        n_categories,
        category_dim,
        sentence_width,
        sentence_filters: d_p,
    };
    if dims.d_s() != d_s {
        return Err(Error::Checkpoint(format!(
            "header D_S {d_s} inconsistent with {} widths x {word_filters} filters",
            dims.word_widths.len()
        )));
    }
    let mut params = ModelParams::zeros(dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for t in params.tensors_mut() {
        let raw = r.take(4 * t.len())?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the parameter body",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { params, vocab_hash, config_json })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rounds every parameter to the nearest `f32`, i.e. what a save/load cycle
/// preserves.
pub fn round_to_f32(params: &ModelParams) -> ModelParams {
    let mut p = params.clone();
    for t in p.tensors_mut() {
        let t: &mut Tensor = t;
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    p
}
