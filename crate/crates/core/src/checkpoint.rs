//! Binary checkpoints: model config, vocabulary and named `f64` arrays.
//!
//! Layout (little endian):
//! `b"IDUBCKPT"`, `u32` format version, `u64` header length, JSON header
//! `{config, vocab}`, `u32` array count, then per array `u32` name length,
//! name, `u64` rows, `u64` cols and `rows * cols` `f64` values.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore, Seq2Seq};
use crate::tokenizer::Vocabulary;

const MAGIC: &[u8; 8] = b"IDUBCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
}

pub fn to_bytes(model: &Seq2Seq, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header { config: model.config().clone(), vocab: vocab.tokens().to_vec() })?;
    let store = model.params();
    let mut out = Vec::with_capacity(64 + header.len() + store.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, value) in store.names.iter().zip(&store.values) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for x in value.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Seq2Seq, Vocabulary)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let vocab = Vocabulary::from_tokens(header.vocab.iter().map(String::as_str));
    if vocab.tokens() != header.vocab.as_slice() {
        return Err(Error::Checkpoint("vocabulary is not in canonical order".into()));
    }
    let n = r.u32()? as usize;
    let mut store = ParamStore { names: Vec::with_capacity(n), values: Vec::with_capacity(n) };
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("array too large".into()))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.names.push(name);
        store.values.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches data"));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let model = Seq2Seq::from_parts(header.config, store)?;
    Ok((model, vocab))
}

pub fn save(path: &Path, model: &Seq2Seq, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Seq2Seq, Vocabulary)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let cfg = ModelConfig {
            src_vocab: vocab.len(),
            tgt_vocab: vocab.len(),
            model_dim: 8,
            ffn_dim: 16,
            heads: 2,
            layers_enc: 1,
            layers_dec: 1,
            ..ModelConfig::default()
        };
        let model = Seq2Seq::new(cfg).unwrap();
        let bytes = to_bytes(&model, &vocab).unwrap();
        let (back, v2) = from_bytes(&bytes).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(back.config(), model.config());
        for (a, b) in back.params().values.iter().zip(&model.params().values) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(to_bytes(&back, &v2).unwrap(), bytes);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(from_bytes(&wrong).is_err());
    }
}
