//! Little-endian binary tensor records: `"TSR1"`, u32 rank, u32 dims, f64 data.

use std::io::{Read, Write};

use super::{numel, Result, TensorError};
use crate::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"TSR1";

pub fn write_record<T: Scalar, W: Write>(w: &mut W, shape: &[usize], data: &[T]) -> Result<()> {
    if numel(shape) != data.len() {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            len: data.len(),
        });
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_record<T: Scalar, R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<T>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(TensorError::Format(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = numel(&shape);
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(T::lit(f64::from_le_bytes(buf)));
    }
    Ok((shape, data))
}

/// Decodes consecutive records from the front of `bytes`, stopping at the
/// first position that does not start with the record magic. Returns the
/// records and the offset where decoding stopped.
pub fn decode_records<T: Scalar>(bytes: &[u8]) -> Result<(Vec<(Vec<usize>, Vec<T>)>, usize)> {
    let mut records = Vec::new();
    let mut cursor = std::io::Cursor::new(bytes);
    loop {
        let pos = cursor.position() as usize;
        if !bytes[pos..].starts_with(TENSOR_MAGIC) {
            return Ok((records, pos));
        }
        records.push(read_record(&mut cursor)?);
    }
}
