//! The `MIMT` binary tensor format.
//!
//! Layout: the 4 magic bytes `MIMT`, a little-endian `u32` rank (at most 4),
//! `rank` little-endian `u32` dimensions, then the `f32` payload in
//! row-major order, little-endian. Nothing may follow the payload.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, ParseError, Result};

pub const MAGIC: [u8; 4] = *b"MIMT";
pub const MAX_RANK: usize = 4;

/// Serializes `array` to the `MIMT` byte layout.
pub fn encode_tensor(array: &ArrayD<f32>) -> Result<Vec<u8>> {
    if array.ndim() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank {} exceeds the supported maximum of {MAX_RANK}",
            array.ndim()
        )));
    }
    if let Some(bad) = array.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("refusing to persist non-finite value {bad}")));
    }
    let mut out = Vec::with_capacity(8 + 4 * array.ndim() + 4 * array.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(array.ndim() as u32).to_le_bytes());
    for &d in array.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Shape(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    // `iter` walks logical row-major order regardless of memory layout.
    for v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a complete `MIMT` buffer.
pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<ArrayD<f32>, ParseError> {
    let (array, used) = decode_tensor_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ParseError::TrailingBytes(bytes.len() - used));
    }
    Ok(array)
}

/// Parses one `MIMT` tensor from the front of `bytes`, returning it with the
/// number of bytes consumed. Used by containers that concatenate tensors.
pub fn decode_tensor_prefix(bytes: &[u8]) -> std::result::Result<(ArrayD<f32>, usize), ParseError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(ParseError::BadMagic { expected: MAGIC, found });
    }
    let rank = cursor.u32()?;
    if rank as usize > MAX_RANK {
        return Err(ParseError::RankTooLarge(rank));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(cursor.u32()?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| ParseError::DimOverflow(dims.clone()))?;
    let payload = cursor.take(count * 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    let array = ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|_| ParseError::DimOverflow(dims.clone()))?;
    Ok((array, cursor.pos))
}

pub fn write_tensor(path: impl AsRef<Path>, array: &ArrayD<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(array)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    file.write_all(&bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ParseError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ParseError::Truncated { needed: n, available });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> std::result::Result<u32, ParseError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
