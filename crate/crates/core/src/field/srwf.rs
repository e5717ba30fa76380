//! SRWF: `b"SRWF"`, `u32` LE height, `u32` LE width, `u8` kind
//! (0 = complex, interleaved re/im `f32`; 1 = real `f32`), then the row-major
//! payload in little-endian `f32`.
//!
//! Samples are stored at single precision, so `decode(encode(g)) == g` holds
//! bit-for-bit for grids whose values are exactly representable as `f32`, and
//! `encode(decode(bytes)) == bytes` holds for every well-formed file.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::Grid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SRWF";
const HEADER_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Complex = 0,
    Real = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SrwfData {
    Complex(Grid<Complex64>),
    Real(Grid<f64>),
}

fn header(out: &mut Vec<u8>, height: usize, width: usize, kind: Kind) -> Result<()> {
    let h = u32::try_from(height).map_err(|_| Error::Format("height exceeds u32".into()))?;
    let w = u32::try_from(width).map_err(|_| Error::Format("width exceeds u32".into()))?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.push(kind as u8);
    Ok(())
}

pub fn encode_complex(grid: &Grid<Complex64>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.len() * 8);
    header(&mut out, grid.height(), grid.width(), Kind::Complex)?;
    for z in grid.data() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(grid: &Grid<f64>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.len() * 4);
    header(&mut out, grid.height(), grid.width(), Kind::Real)?;
    for v in grid.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SrwfData> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let kind = match bytes[12] {
        0 => Kind::Complex,
        1 => Kind::Real,
        k => return Err(Error::Format(format!("unknown kind {k}"))),
    };
    if height == 0 || width == 0 {
        return Err(Error::Format(format!("empty shape {height}x{width}")));
    }
    let per_sample = match kind {
        Kind::Complex => 8,
        Kind::Real => 4,
    };
    let payload_len = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(per_sample))
        .ok_or_else(|| Error::Format(format!("shape overflow {height}x{width}")))?;
    let expected = HEADER_LEN
        .checked_add(payload_len)
        .ok_or_else(|| Error::Format("shape overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    match kind {
        Kind::Complex => {
            let v: Vec<f64> = floats.collect();
            let data = v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Ok(SrwfData::Complex(Grid::new(height, width, data)?))
        }
        Kind::Real => Ok(SrwfData::Real(Grid::new(height, width, floats.collect())?)),
    }
}

pub fn write_complex(path: impl AsRef<Path>, grid: &Grid<Complex64>) -> Result<()> {
    fs::write(path, encode_complex(grid)?)?;
    Ok(())
}

pub fn write_real(path: impl AsRef<Path>, grid: &Grid<f64>) -> Result<()> {
    fs::write(path, encode_real(grid)?)?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Grid<bool>) -> Result<()> {
    write_real(path, &mask.map(|&b| if b { 1.0 } else { 0.0 }))
}

pub fn read(path: impl AsRef<Path>) -> Result<SrwfData> {
    decode(&fs::read(path)?)
}

pub fn read_complex(path: impl AsRef<Path>) -> Result<Grid<Complex64>> {
    match read(path)? {
        SrwfData::Complex(g) => Ok(g),
        SrwfData::Real(_) => Err(Error::Format("expected complex kind, found real".into())),
    }
}

pub fn read_real(path: impl AsRef<Path>) -> Result<Grid<f64>> {
    match read(path)? {
        SrwfData::Real(g) => Ok(g),
        SrwfData::Complex(_) => Err(Error::Format("expected real kind, found complex".into())),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Grid<bool>> {
    Ok(read_real(path)?.map(|&v| v != 0.0))
}
