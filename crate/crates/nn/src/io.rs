//! `NNW1` weight files: magic, u32 entry count, then per entry the name
//! length, name bytes, rank, dims (all u32 LE) and f32 LE values row-major.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

pub const NNW1_MAGIC: [u8; 4] = *b"NNW1";

#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

fn put_u32(w: &mut impl Write, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<usize, WeightFileError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_weights<T: Scalar>(ps: &ParamSet<T>, w: &mut impl Write) -> io::Result<()> {
    w.write_all(&NNW1_MAGIC)?;
    put_u32(w, ps.len())?;
    for e in &ps.entries {
        put_u32(w, e.name.len())?;
        w.write_all(e.name.as_bytes())?;
        put_u32(w, e.value.rank())?;
        for &d in &e.value.shape {
            put_u32(w, d)?;
        }
        for v in &e.value.data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_weights(r: &mut impl Read) -> Result<Vec<(String, Tensor<f32>)>, WeightFileError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != NNW1_MAGIC {
        return Err(WeightFileError::BadMagic(magic));
    }
    let count = get_u32(r)?;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = get_u32(r)?;
        if len > 4096 {
            return Err(WeightFileError::Malformed(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| WeightFileError::Malformed("name is not utf-8".into()))?;
        let rank = get_u32(r)?;
        if rank > 8 {
            return Err(WeightFileError::Malformed(format!("rank {rank}")));
        }
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    Ok(out)
}

/// Copies stored tensors into `ps`; every parameter must be present with
/// the same shape.
pub fn load_into<T: Scalar>(ps: &mut ParamSet<T>, stored: &[(String, Tensor<f32>)]) -> Result<(), WeightFileError> {
    if stored.len() != ps.len() {
        return Err(WeightFileError::Mismatch(format!(
            "file has {} tensors, model has {}",
            stored.len(),
            ps.len()
        )));
    }
    for e in &mut ps.entries {
        let (_, t) = stored
            .iter()
            .find(|(n, _)| *n == e.name)
            .ok_or_else(|| WeightFileError::Mismatch(format!("missing {}", e.name)))?;
        if t.shape != e.value.shape {
            return Err(WeightFileError::Mismatch(format!(
                "{}: shape {:?} vs {:?}",
                e.name, t.shape, e.value.shape
            )));
        }
        e.value = t.cast();
    }
    Ok(())
}
