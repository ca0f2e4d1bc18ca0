//! Parameter checkpoint serialization.
//!
//! Binary, little-endian: magic `PATW`, format version (u32), parameter
//! count (u32), then per parameter: name length (u16), UTF-8 name, rank
//! (u8), dims (u32 each), float32 data row-major. The SHA-256 of exactly
//! these bytes doubles as the model checksum that datastores and indexes
//! carry to guard against key-space mismatches.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PATW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected PATW")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid name bytes in checkpoint")]
    BadName,
    #[error("tensor shape/data inconsistency for parameter {0}")]
    BadShape(String),
}

pub fn write_params<S: Scalar, W: Write>(
    mut w: W,
    params: &[(String, Tensor<S>)],
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for (name, tensor) in params {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(tensor.shape().len() as u8)?;
        for &d in tensor.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in tensor.data() {
            w.write_f32::<LittleEndian>(v.to_f64() as f32)?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName)?;
        let rank = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.read_f32::<LittleEndian>()?);
        }
        let tensor = Tensor::new(shape, data).map_err(|_| CheckpointError::BadShape(name.clone()))?;
        params.push((name, tensor));
    }
    Ok(params)
}

pub fn save_to_path<S: Scalar>(
    path: &Path,
    params: &[(String, Tensor<S>)],
) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_from_path(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_params(bytes.as_slice())
}

/// SHA-256 over the serialized checkpoint bytes.
pub fn params_checksum<S: Scalar>(params: &[(String, Tensor<S>)]) -> [u8; 32] {
    let mut buf = Vec::new();
    write_params(&mut buf, params).expect("in-memory serialization cannot fail");
    let digest = Sha256::digest(&buf);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}
