//! Flat binary checkpoint: `MLN1`, u32 tensor count, then per tensor a u32
//! name length, the UTF-8 name, u32 rank, u32 dims and little-endian f64 data.

use std::io::{Read, Write};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io_util::{read_f64s, read_u32, write_f64s};

pub const MAGIC: &[u8; 4] = b"MLN1";

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_f64s(&mut w, t.data())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("checkpoint magic mismatch".into()));
    }
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        if nlen > 1 << 16 {
            return Err(Error::Format(format!("tensor name length {nlen}")));
        }
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = read_f64s(&mut r, n)?;
        params.push(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}
