//! Binary checkpoint format.
//!
//! ```text
//! "MPB1"
//! u32 LE length, config document (key=value lines)
//! u32 LE tensor count
//! per tensor: u16 name length, name, u8 dtype, u8 rank, u64 dims, f64 LE values
//! 32-byte SHA-256 of everything above
//! ```

use std::io::Write;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::EncoderParams;
use crate::error::{CheckpointError, Result};

const MAGIC: &[u8; 4] = b"MPB1";
const DTYPE_F64: u8 = 1;
const DIGEST_LEN: usize = 32;

fn config_document(params: &EncoderParams, cfg: &ModelConfig) -> String {
    format!(
        "{}phoneme_vocab={}\nsup_vocab={}\n",
        cfg.to_document(),
        params.phoneme_vocab(),
        params.sup_vocab()
    )
}

pub fn save_checkpoint<W: Write>(params: &EncoderParams, cfg: &ModelConfig, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(params.num_params() * 8 + 1024);
    buf.extend_from_slice(MAGIC);
    let doc = config_document(params, cfg);
    buf.extend_from_slice(&(doc.len() as u32).to_le_bytes());
    buf.extend_from_slice(doc.as_bytes());
    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        buf.push(t.ndim() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn shape_key(c: &ModelConfig) -> Vec<usize> {
    vec![c.layers, c.hidden, c.heads, c.ff_filter, c.ff_kernels.0, c.ff_kernels.1, c.max_len]
}

/// Reads a checkpoint. When `expected` is given, its shape-defining fields
/// must match the stored configuration.
pub fn load_checkpoint(
    bytes: &[u8],
    expected: Option<&ModelConfig>,
) -> Result<(EncoderParams, ModelConfig)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let doc_len = r.u32()? as usize;
    let doc = std::str::from_utf8(r.take(doc_len)?)
        .map_err(|_| CheckpointError::Config("not UTF-8".into()))?;
    let (cfg, extra) = ModelConfig::from_document(doc).map_err(CheckpointError::Config)?;
    cfg.validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let vocab = |key: &str| -> std::result::Result<usize, CheckpointError> {
        extra
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| CheckpointError::Config(format!("missing `{key}`")))
    };
    let (n_ph, n_sup) = (vocab("phoneme_vocab")?, vocab("sup_vocab")?);
    if let Some(exp) = expected {
        if shape_key(exp) != shape_key(&cfg) {
            return Err(CheckpointError::Shape {
                name: "model".into(),
                expected: shape_key(exp),
                found: shape_key(&cfg),
            }
            .into());
        }
    }

    let mut params = EncoderParams::zeros(&cfg, n_ph, n_sup);
    let count = r.u32()? as usize;
    let slots = params.tensors_mut();
    if count != slots.len() {
        return Err(CheckpointError::Config(format!(
            "expected {} tensors, found {count}",
            slots.len()
        ))
        .into());
    }
    for (name, mut slot) in slots {
        let name_len = r.u16()? as usize;
        let stored = r.take(name_len)?;
        if stored != name.as_bytes() {
            return Err(CheckpointError::Tensor(name).into());
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::Dtype(dtype).into());
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if dims != slot.shape() {
            return Err(CheckpointError::Shape {
                name,
                expected: slot.shape().to_vec(),
                found: dims,
            }
            .into());
        }
        let raw = r.take(slot.len() * 8)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let body_end = r.pos;
    let digest = r.take(DIGEST_LEN)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Config("trailing bytes after checksum".into()).into());
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(CheckpointError::Checksum.into());
    }
    Ok((params, cfg))
}
