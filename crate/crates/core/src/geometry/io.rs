//! Point-cloud files: binary `PCB1` (magic, u32 count, f32 xyz triples, all
//! little-endian) and plain-text XYZ (one `x y z` per line).

use std::io::{BufRead, Read, Write};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::Scalar;

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";

pub fn write_pcb<T: Scalar, W: Write>(w: &mut W, cloud: &PointCloud<T>) -> Result<()> {
    w.write_all(PCB_MAGIC)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    for v in cloud.points().iter().flatten() {
        let f = v.to_f32().ok_or_else(|| Error::Format("coordinate not representable as f32".into()))?;
        w.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_pcb<T: Scalar, R: Read>(r: &mut R) -> Result<PointCloud<T>> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != PCB_MAGIC {
        return Err(Error::Format(format!("bad point-cloud magic {:?}", &head[..4])));
    }
    let count = u32::from_le_bytes(head[4..].try_into().expect("4 bytes")) as usize;
    let mut buf = vec![0u8; count * 12];
    r.read_exact(&mut buf)?;
    let flat: Vec<T> = buf
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
        .collect();
    PointCloud::from_flat(&flat)
}

/// Reads `x y z` lines; blank lines and lines starting with `#` are skipped.
pub fn read_xyz<T: Scalar, R: BufRead>(r: R) -> Result<PointCloud<T>> {
    let mut pts = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 3 {
            return Err(Error::Format(format!(
                "line {}: expected 3 coordinates, found {}",
                lineno + 1,
                vals.len()
            )));
        }
        pts.push([T::lit(vals[0]), T::lit(vals[1]), T::lit(vals[2])]);
    }
    PointCloud::new(pts)
}
