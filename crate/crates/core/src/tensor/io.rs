//! Binary tensor format.
//!
//! ```text
//! magic    4 bytes  "ISOF"
//! version  u32 LE   currently 1
//! dtype    u32 LE   1 = f32, 2 = f64
//! rank     u32 LE
//! extents  rank × u64 LE
//! data     product(extents) little-endian IEEE-754 values, row-major
//! ```
//!
//! Blobs may be concatenated; [`read_tensor`] consumes exactly one.

use std::io::{Read, Write};

use super::{DType, Real, Tensor};
use crate::error::{ensure, Error, Result};

pub const MAGIC: &[u8; 4] = b"ISOF";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensor<T: Real, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * t.rank() + t.len() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(T::DTYPE as u32).to_le_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match T::DTYPE {
        DType::F32 => t.data().iter().for_each(|v| buf.extend_from_slice(&(v.f64() as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|v| buf.extend_from_slice(&v.f64().to_le_bytes())),
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor, converting from the stored dtype to `T`.
pub fn read_tensor<T: Real, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    ensure!(&magic == MAGIC, Format, "bad tensor magic {:?}", magic);
    let version = read_u32(input)?;
    ensure!(version == FORMAT_VERSION, Format, "unsupported tensor format version {}", version);
    let code = read_u32(input)?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {}", code)))?;
    let rank = read_u32(input)? as usize;
    ensure!((1..=8).contains(&rank), Format, "implausible tensor rank {}", rank);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
    let n = n.ok_or_else(|| Error::Format(format!("extent overflow {:?}", shape)))?;
    let mut raw = vec![0u8; n * dtype.size()];
    input.read_exact(&mut raw)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
    };
    Tensor::new(&shape, data)
}

pub fn save<T: Real>(path: &std::path::Path, t: &Tensor<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)?;
    f.flush()?;
    Ok(())
}

pub fn load<T: Real>(path: &std::path::Path) -> Result<Tensor<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}
