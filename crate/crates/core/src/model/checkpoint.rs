//! `SLMC` checkpoint files.
//!
//! Layout (little endian): magic `SLMC`, version u16, ten u32 config fields
//! (enc_layers, dec_layers, hidden_dim, heads, mlp_dim, patch_f, patch_t,
//! embed_dim, vocab_size, max_text_len), dropout f32, tensor count u32, then
//! per tensor: name length u16, UTF-8 name, rank u8, dims u32 each, f32 payload.

use std::path::Path;

use ndarray::Array2;

use super::{Model, ModelConfig};
use crate::autodiff::Parameters;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLMC";
const VERSION: u16 = 1;

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + model.params.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let fields = [
        c.enc_layers,
        c.dec_layers,
        c.hidden_dim,
        c.heads,
        c.mlp_dim,
        c.patch_f,
        c.patch_t,
        c.embed_dim,
        c.vocab_size,
        c.max_text_len,
    ];
    for f in fields {
        let v = u32::try_from(f).map_err(|_| Error::invalid(format!("config value {f} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid("tensor name too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(2);
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
        for &x in t.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
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
        let end = end.ok_or_else(|| Error::format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads the configuration block and tensors, without binding them to a layout.
pub fn decode_raw(bytes: &[u8]) -> Result<(ModelConfig, Parameters)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let mut f = [0usize; 10];
    for x in &mut f {
        *x = r.u32()? as usize;
    }
    let config = ModelConfig {
        enc_layers: f[0],
        dec_layers: f[1],
        hidden_dim: f[2],
        heads: f[3],
        mlp_dim: f[4],
        patch_f: f[5],
        patch_t: f[6],
        embed_dim: f[7],
        vocab_size: f[8],
        max_text_len: f[9],
        dropout: r.f32()?,
    };
    config.validate().map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let count = r.u32()?;
    let mut params = Parameters::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("tensor name is not UTF-8"))?;
        let rank = r.u8()?;
        if rank != 2 {
            return Err(Error::format(format!("tensor {name} has rank {rank}, expected 2")));
        }
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let n = rows.checked_mul(cols).filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()));
        let n = n.ok_or_else(|| Error::format(format!("tensor {name} dims {rows}x{cols} exceed the file")))?;
        let raw = r.take(n * 4)?;
        let data: Vec<f64> =
            raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::format(e.to_string()))?;
        params.insert(name, t).map_err(|e| Error::format(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok((config, params))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let (config, params) = decode_raw(bytes)?;
    Model::from_parts(config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

/// Loads a checkpoint; with `expected` set, a differing configuration is rejected.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Model> {
    let model = decode_checkpoint(&std::fs::read(path)?)?;
    if let Some(e) = expected {
        if e != &model.config {
            return Err(Error::config(format!(
                "checkpoint {} was written for {:?}, run expects {:?}",
                path.display(),
                model.config,
                e
            )));
        }
    }
    Ok(model)
}
