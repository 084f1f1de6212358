//! ETNS container: `"ETNS"`, version u8, dtype u8, ndim u8, ndim × u32 LE
//! dims, then the row-major little-endian payload. No padding.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ETNS";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    U8 = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtnsArray {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl EtnsArray {
    pub fn dtype(&self) -> Dtype {
        match self.payload {
            Payload::F32(_) => Dtype::F32,
            Payload::U8(_) => Dtype::U8,
        }
    }
}

/// Header size in bytes for an array of the given rank.
pub fn header_len(ndim: usize) -> usize {
    MAGIC.len() + 3 + 4 * ndim
}

fn write_header(out: &mut Vec<u8>, dtype: Dtype, dims: &[usize]) {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_f32(dims: &[usize], values: &[f32]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    let mut out = Vec::with_capacity(header_len(dims.len()) + 4 * values.len());
    write_header(&mut out, Dtype::F32, dims);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u8(dims: &[usize], values: &[u8]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    let mut out = Vec::with_capacity(header_len(dims.len()) + values.len());
    write_header(&mut out, Dtype::U8, dims);
    out.extend_from_slice(values);
    out
}

/// Parses the header only, returning (dtype, dims, payload offset).
pub fn peek(bytes: &[u8]) -> Result<(Dtype, Vec<usize>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 7 {
        return Err(Error::LengthMismatch {
            expected: 7,
            found: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let dtype = Dtype::from_code(bytes[5])?;
    let ndim = bytes[6];
    if ndim != 2 && ndim != 3 {
        return Err(Error::BadRank {
            expected: 3,
            found: ndim,
        });
    }
    let offset = header_len(ndim as usize);
    if bytes.len() < offset {
        return Err(Error::LengthMismatch {
            expected: offset,
            found: bytes.len(),
        });
    }
    let dims = bytes[7..offset]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok((dtype, dims, offset))
}

pub fn decode(bytes: &[u8]) -> Result<EtnsArray> {
    let (dtype, dims, offset) = peek(bytes)?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("{dims:?} overflows")))?;
    let expected = count
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| Error::InvalidShape(format!("{dims:?} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[offset..];
    let payload = match dtype {
        Dtype::F32 => {
            let mut values = Vec::with_capacity(count);
            for (i, c) in body.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(Error::NonFinite(i));
                }
                values.push(v);
            }
            Payload::F32(values)
        }
        Dtype::U8 => Payload::U8(body.to_vec()),
    };
    Ok(EtnsArray { dims, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lengths() {
        assert_eq!(header_len(2), 15);
        assert_eq!(header_len(3), 19);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = encode_f32(&[1, 1], &[1.0]);
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::BadMagic)));
        let mut b = encode_f32(&[1, 1], &[1.0]);
        b[4] = 2;
        assert!(matches!(decode(&b), Err(Error::UnsupportedVersion(2))));
        let mut b = encode_f32(&[1, 1], &[1.0]);
        b[5] = 9;
        assert!(matches!(decode(&b), Err(Error::UnsupportedDtype(9))));
        let mut b = encode_f32(&[1, 1], &[1.0]);
        b[6] = 4;
        assert!(matches!(decode(&b), Err(Error::BadRank { found: 4, .. })));
    }

    #[test]
    fn rejects_trailing_bytes_and_nan() {
        let mut b = encode_u8(&[2, 2], &[0, 1, 2, 3]);
        b.push(0);
        assert!(matches!(decode(&b), Err(Error::LengthMismatch { .. })));
        let b = encode_f32(&[1, 2], &[1.0, f32::NAN]);
        assert!(matches!(decode(&b), Err(Error::NonFinite(1))));
    }
}
