//! VLT1 binary tensor format.
//!
//! Layout: magic `VLT1`, u32 LE rank (always 2), u32 LE rows, u32 LE cols,
//! then rows*cols FP32 LE values.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"VLT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&2u32.to_le_bytes())?;
    w.write_all(&(t.rows() as u32).to_le_bytes())?;
    w.write_all(&(t.cols() as u32).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected VLT1".into()));
    }
    let rank = read_u32(r)?;
    if rank != 2 {
        return Err(Error::Format(format!(
            "unsupported rank {rank}, expected 2"
        )));
    }
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf));
    }
    DenseTensor::new(rows, cols, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tensor_file(path: &std::path::Path, t: &DenseTensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn read_tensor_file(path: &std::path::Path) -> Result<DenseTensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
