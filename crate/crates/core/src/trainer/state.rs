//! `SLMS` train-state sidecar: step counter and Adam moments.
//!
//! Layout (little endian): magic `SLMS`, version u16, step u64, tensor count
//! u32, then per tensor rows u32, cols u32 and the first moment followed by
//! the second moment as f64 values.

use ndarray::Array2;

use super::TrainState;
use crate::autodiff::Gradients;
use crate::model::Model;
use crate::{Error, Result};

pub const STATE_MAGIC: &[u8; 4] = b"SLMS";
const VERSION: u16 = 1;

pub fn encode_train_state(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.m.tensors.len() as u32).to_le_bytes());
    for (m, v) in state.m.tensors.iter().zip(&state.v.tensors) {
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for x in m.iter().chain(v.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::format(format!("train state truncated at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

/// Rebuilds the state around `model`, whose tensor shapes the moments must match.
pub fn decode_train_state(bytes: &[u8], model: Model) -> Result<TrainState> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != STATE_MAGIC {
        return Err(Error::format("not a train-state file (bad magic)"));
    }
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::format(format!("unsupported train-state version {version}")));
    }
    let step = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().expect("8 bytes"));
    let count = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    if count != model.params.len() {
        return Err(Error::format(format!("train state has {count} tensors, model has {}", model.params.len())));
    }
    let mut m = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for (_, name, p) in model.params.iter() {
        let rows = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().expect("4 bytes")) as usize;
        if (rows, cols) != p.dim() {
            return Err(Error::Shape(format!("moments for {name} are ({rows}, {cols}), parameter is {:?}", p.dim())));
        }
        let mut read = || -> Result<Array2<f64>> {
            let raw = take(bytes, &mut pos, rows * cols * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::format(e.to_string()))
        };
        m.push(read()?);
        v.push(read()?);
    }
    if pos != bytes.len() {
        return Err(Error::format("trailing bytes after train state"));
    }
    Ok(TrainState { step, model, m: Gradients { tensors: m }, v: Gradients { tensors: v } })
}
