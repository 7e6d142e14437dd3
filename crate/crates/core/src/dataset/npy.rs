//! NPY v1.0 reading and writing for little-endian `f4`/`f8` arrays in C
//! order.
//!
//! Layout: the magic string `\x93NUMPY`, version bytes `01 00`, a
//! little-endian `u16` header length, an ASCII dict literal padded with
//! spaces and terminated by `\n` so the payload starts on a 64-byte
//! boundary, then the raw values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn item_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn npy_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Npy {
        offset,
        message: message.into(),
    }
}

pub fn encode_npy(tensor: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    tensor.check_finite()?;
    let shape = match tensor.shape() {
        [] => "()".to_string(),
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        dtype.descr()
    );
    let unpadded = PREAMBLE + header.len() + 1;
    let padded = unpadded.div_ceil(ALIGN) * ALIGN;
    header.push_str(&" ".repeat(padded - unpadded));
    header.push('\n');
    let header_len = u16::try_from(header.len()).map_err(|_| npy_err(8, "header too long for NPY v1.0"))?;

    let mut out = Vec::with_capacity(padded + tensor.len() * dtype.item_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match dtype {
        Dtype::F32 => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_npy(bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    if let Some(pos) = (0..MAGIC.len()).find(|&i| bytes.get(i) != Some(&MAGIC[i])) {
        return Err(npy_err(pos, "bad magic string (expected \\x93NUMPY)"));
    }
    match bytes.get(6..8) {
        Some([1, 0]) => {}
        Some(v) => return Err(npy_err(6, format!("unsupported format version {}.{}", v[0], v[1]))),
        None => return Err(npy_err(6, "file ends before version bytes")),
    }
    let header_len = bytes
        .get(8..10)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .ok_or_else(|| npy_err(8, "file ends before header length"))?;
    let header_end = PREAMBLE + header_len;
    let header = bytes
        .get(PREAMBLE..header_end)
        .ok_or_else(|| npy_err(8, format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header = std::str::from_utf8(header).map_err(|_| npy_err(PREAMBLE, "header is not ASCII"))?;
    let (dtype, fortran, shape) = parse_header(header)?;
    if fortran {
        return Err(npy_err(PREAMBLE, "fortran_order arrays are not supported"));
    }

    let count: usize = shape.iter().product();
    let payload = &bytes[header_end..];
    let expected = count * dtype.item_size();
    if payload.len() != expected {
        return Err(npy_err(
            header_end,
            format!("payload holds {} bytes, shape {shape:?} needs {expected}", payload.len()),
        ));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype))
}

fn parse_header(header: &str) -> Result<(Dtype, bool, Vec<usize>)> {
    let field = |key: &str| -> Result<&str> {
        let pat = format!("'{key}':");
        let at = header
            .find(&pat)
            .ok_or_else(|| npy_err(PREAMBLE, format!("header lacks `{key}`")))?;
        Ok(header[at + pat.len()..].trim_start())
    };

    let descr = field("descr")?;
    let dtype = if descr.starts_with("'<f8'") {
        Dtype::F64
    } else if descr.starts_with("'<f4'") {
        Dtype::F32
    } else {
        let shown: String = descr.chars().take(8).collect();
        return Err(npy_err(PREAMBLE, format!("unsupported dtype {shown} (expected '<f4' or '<f8')")));
    };

    let fortran = field("fortran_order")?;
    let fortran = if fortran.starts_with("False") {
        false
    } else if fortran.starts_with("True") {
        true
    } else {
        return Err(npy_err(PREAMBLE, "malformed fortran_order"));
    };

    let shape = field("shape")?;
    let close = shape
        .find(')')
        .filter(|_| shape.starts_with('('))
        .ok_or_else(|| npy_err(PREAMBLE, "malformed shape tuple"))?;
    let dims = shape[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| npy_err(PREAMBLE, format!("bad shape entry `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, fortran, dims))
}

pub fn write_npy(tensor: &Tensor, dtype: Dtype, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_npy(tensor, dtype)?)?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<(Tensor, Dtype)> {
    decode_npy(&fs::read(path)?)
}
