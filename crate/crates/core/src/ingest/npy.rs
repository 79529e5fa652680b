//! Reading and writing the numpy npy format, version 1.0.
//!
//! Only little-endian `f4`/`f8` arrays of rank 1 or 2 in C order are
//! supported. Writers always emit `<f8` with the header padded so that the
//! preamble is a multiple of 64 bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::IngestError;
use crate::matrix::FeatureMatrix;

/// The npy magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn itemsize(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// A raw array as stored on disk, widened to `f64`.
///
/// Unlike [`FeatureMatrix`] this may hold non-finite values, which posterior
/// grids need for hard zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NpyArray {
    /// Rows and columns, promoting 1-D arrays to a single column.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, 1),
            [n, d] => (*n, *d),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn read_npy_from<R: Read>(reader: &mut R) -> Result<NpyArray, IngestError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| IngestError::io("<reader>", e))?;
    parse_npy(&bytes)
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray, IngestError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(IngestError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(IngestError::BadHeader("file ends inside the preamble".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(IngestError::UnsupportedVersion { major, minor });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    if bytes.len() < payload_start {
        return Err(IngestError::BadHeader("file ends inside the header".into()));
    }
    let header = std::str::from_utf8(&bytes[10..payload_start])
        .map_err(|_| IngestError::BadHeader("header is not ASCII".into()))?;
    let dict = parse_header(header)?;
    if dict.fortran_order {
        return Err(IngestError::FortranOrderUnsupported);
    }
    if dict.shape.is_empty() || dict.shape.len() > 2 {
        return Err(IngestError::UnsupportedRank(dict.shape.len()));
    }

    let count: usize = dict.shape.iter().product();
    let payload = &bytes[payload_start..];
    let expected = count * dict.dtype.itemsize();
    if payload.len() != expected {
        return Err(IngestError::TruncatedPayload { expected, found: payload.len() });
    }
    let data = match dict.dtype {
        Dtype::F8 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F4 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
    };
    Ok(NpyArray { shape: dict.shape, data })
}

pub fn read_npy(path: &Path) -> Result<NpyArray, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    parse_npy(&bytes)
}

/// Reads a 1-D or 2-D float array as a feature matrix.
///
/// 1-D arrays become a single column.
pub fn read_array(path: &Path) -> Result<FeatureMatrix, IngestError> {
    let arr = read_npy(path)?;
    let (rows, cols) = arr.dims2();
    FeatureMatrix::new(rows, cols, arr.data).map_err(|e| IngestError::matrix(path, e))
}

pub fn write_npy_to<W: Write>(writer: &mut W, shape: &[usize], data: &[f64]) -> io::Result<()> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let shape_str = match shape {
        [n] => format!("({n},)"),
        dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic + version + u16 length + header + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');
    let header_len = u16::try_from(header.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "npy header too long for v1.0"))?;

    writer.write_all(&MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&header_len.to_le_bytes())?;
    writer.write_all(header.as_bytes())?;
    for v in data {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> Result<(), IngestError> {
    let mut buf = Vec::with_capacity(128 + data.len() * 8);
    write_npy_to(&mut buf, shape, data).map_err(|e| IngestError::io(path, e))?;
    fs::write(path, buf).map_err(|e| IngestError::io(path, e))
}

/// Writes a matrix as a 2-D `<f8` array.
pub fn write_array(path: &Path, m: &FeatureMatrix) -> Result<(), IngestError> {
    write_npy(path, &[m.rows(), m.cols()], m.as_slice())
}

fn parse_header(header: &str) -> Result<HeaderDict, IngestError> {
    let bad = |msg: &str| IngestError::BadHeader(format!("{msg}: {}", header.trim_end()));
    let body = header
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dictionary literal"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = parse_quoted(rest).ok_or_else(|| bad("expected a quoted key"))?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':'"))?.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = parse_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner_end = after.find(')').ok_or_else(|| bad("unterminated shape tuple"))?;
                let inner = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                let dims = inner[..inner_end - 1]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim_end_matches('L').parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("shape entries must be integers"))?;
                shape = Some(dims);
                &after[inner_end + 1..]
            }
            _ => return Err(bad("unexpected key")),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }

    let descr = descr.ok_or_else(|| bad("missing descr"))?;
    let dtype = match descr.as_str() {
        "<f8" => Dtype::F8,
        "<f4" => Dtype::F4,
        other => return Err(IngestError::UnsupportedDtype(other.to_string())),
    };
    Ok(HeaderDict {
        dtype,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

fn parse_quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = s[1..].find(q)? + 1;
    Some((&s[1..end], &s[end + 1..]))
}
