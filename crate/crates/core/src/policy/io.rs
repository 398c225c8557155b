//! Binary policy file.
//!
//! Little-endian layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CDALPOL1` |
//! | 4     | `u32` number of classes `n_C` |
//! | 4     | `u32` cell size `H` |
//! | 8 each | `f64` parameters, block by block |
//!
//! Blocks follow [`BLOCK_NAMES`](super::BLOCK_NAMES): forward input weights
//! (`4H x n_C^2`), forward recurrent weights (`4H x H`), forward biases (`4H`),
//! the same three for the backward direction, output weights (`2H`, forward
//! half first) and the output bias. Matrices are row-major with gate rows
//! ordered input, forget, output, cell candidate.

use std::path::Path;

use super::PolicyParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CDALPOL1";

pub fn encode_policy(params: &PolicyParams) -> Vec<u8> {
    let n_classes = (params.input_dim() as f64).sqrt().round() as u32;
    let mut out = Vec::with_capacity(16 + 8 * params.blocks().iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&n_classes.to_le_bytes());
    out.extend_from_slice(&(params.hidden() as u32).to_le_bytes());
    for block in params.blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_policy(bytes: &[u8]) -> Result<PolicyParams> {
    let bad = |msg: String| Error::format(0, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a policy file (bad magic)".into()));
    }
    let n_classes = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if n_classes == 0 || hidden == 0 {
        return Err(bad("policy dimensions must be positive".into()));
    }
    let mut params = PolicyParams::zeros(n_classes * n_classes, hidden);
    let expected: usize = params.blocks().iter().map(|b| b.len()).sum();
    let payload = &bytes[16..];
    if payload.len() != expected * 8 {
        return Err(bad(format!(
            "policy payload has {} bytes, expected {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(bad("policy contains non-finite parameters".into()));
    }
    Ok(params)
}

pub fn save_policy(params: &PolicyParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_policy(params)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_policy(&bytes)
}
