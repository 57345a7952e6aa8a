//! FTEN tensor files.
//!
//! Layout: magic `FTEN`; unsigned 32-bit little-endian rank; `rank`
//! unsigned 32-bit little-endian extents; then `product(extents)` IEEE-754
//! 32-bit little-endian floats in row-major order. Values are stored at 32
//! bits and widened to 64 bits on load.

use std::fs;
use std::path::Path;

use coseg_core::Tensor;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

const MAGIC: &[u8; 4] = b"FTEN";

pub fn read_ften(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ften(&bytes).map_err(|(offset, msg)| Error::parse_offset(path, offset, msg))
}

fn parse_ften(bytes: &[u8]) -> std::result::Result<Tensor, (u64, String)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err((0, "bad magic, expected \"FTEN\"".into()));
    }
    let mut pos = 4usize;
    let rank = read_u32(bytes, &mut pos)? as usize;
    if rank == 0 || rank > 8 {
        return Err(((pos - 4) as u64, format!("unreasonable rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(bytes, &mut pos)? as usize);
    }
    let count: usize = shape.iter().product();
    let need = count
        .checked_mul(4)
        .ok_or((pos as u64, "extent overflow".to_string()))?;
    if bytes.len() - pos != need {
        return Err((
            pos as u64,
            format!(
                "expected {need} data bytes for shape {shape:?}, found {}",
                bytes.len() - pos
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = pos + i * 4;
        let raw: [u8; 4] = bytes[off..off + 4].try_into().expect("bounds checked");
        data.push(f64::from(f32::from_le_bytes(raw)));
    }
    Tensor::new(shape, data).map_err(|e| (pos as u64, e.to_string()))
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> std::result::Result<u32, (u64, String)> {
    if bytes.len() < *pos + 4 {
        return Err((*pos as u64, "truncated header".into()));
    }
    let raw: [u8; 4] = bytes[*pos..*pos + 4].try_into().expect("bounds checked");
    *pos += 4;
    Ok(u32::from_le_bytes(raw))
}

/// Serializes a tensor (values narrowed to f32) and writes it atomically.
pub fn write_ften(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode_ften(tensor))
}

pub fn encode_ften(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(8 + shape.len() * 4 + tensor.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &extent in shape {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}
