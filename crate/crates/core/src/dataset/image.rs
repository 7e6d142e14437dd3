//! Image loading (binary PGM and NPY) and bilinear resizing.

use std::fs;
use std::path::{Path, PathBuf};

use super::npy::read_npy;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length images are resized to before training.
pub const DEFAULT_IMAGE_SIZE: usize = 256;

/// Bilinear resize of every channel of a `[C, H, W]` image with half-pixel
/// centre alignment. Output values never leave the source's `[min, max]`.
pub fn resize_image(image: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    image.expect_rank(3, "resize_image")?;
    image.check_finite()?;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::invalid(format!("target size must be positive, got {th}x{tw}")));
    }
    let ys = sample_positions(h, th);
    let xs = sample_positions(w, tw);
    let src = image.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, th, tw], out)
}

/// For each output index: the two source indices and the interpolation
/// weight of the second.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Reads a binary (P5) PGM and scales samples to `[0, 1]` by its maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(Error::Pgm(format!("unsupported magic `{magic}` (only binary P5 is read)")));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::Pgm(format!("bad {what} `{t}`")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("invalid dimensions {width}x{height} or maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(start..start + width * height * sample_bytes)
        .ok_or_else(|| Error::Pgm("raster shorter than header dimensions".into()))?;
    let scale = maxval as f64;
    let data = if sample_bytes == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Tensor::new(vec![1, height, width], data)
}

/// Writes a `[1, H, W]` (or `[H, W]`) image with values in `[0, 1]` as an
/// 8-bit binary PGM.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "PGM holds a single channel".into(),
            })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Finds the file for `image_id` in `dir`: the exact name first, then the
/// same stem with a `.pgm` or `.npy` extension.
pub fn locate_image(dir: &Path, image_id: &str) -> Result<PathBuf> {
    let exact = dir.join(image_id);
    if exact.is_file() {
        return Ok(exact);
    }
    ["pgm", "npy"]
        .iter()
        .map(|ext| exact.with_extension(ext))
        .find(|p| p.is_file())
        .ok_or(Error::MissingImage(exact))
}

/// Loads `.pgm` or `.npy` images as `[C, H, W]` tensors. Two-dimensional
/// NPY arrays gain a leading channel axis.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let image = match ext.as_str() {
        "pgm" => decode_pgm(&fs::read(path)?)?,
        "npy" => {
            let (t, _) = read_npy(path)?;
            match t.ndim() {
                2 => t.reshape([&[1], t.shape()].concat())?,
                3 => t,
                _ => {
                    return Err(Error::InvalidShape {
                        shape: t.shape().to_vec(),
                        reason: format!("{} is not a 2-D or 3-D image array", path.display()),
                    })
                }
            }
        }
        _ => {
            return Err(Error::invalid(format!(
                "{}: unsupported image format (expected .pgm or .npy)",
                path.display()
            )))
        }
    };
    image.check_finite()?;
    Ok(image)
}
