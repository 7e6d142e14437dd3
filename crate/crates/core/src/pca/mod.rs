//! Per-image, per-channel PCA compression.
//!
//! Each channel of an image is treated as `H` observations (its rows) of a
//! `W`-dimensional variable. The column means are removed and the principal
//! axes come from the SVD of the centred `H x W` matrix. Keeping the first
//! `k` axes stores `H*k` coefficients plus the `k x W` basis and the mean
//! row instead of the `H*W` pixels.

mod jacobi;

use std::fs;
use std::path::Path;

use crate::dataset::npy::{read_npy, write_npy, Dtype};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Singular values below this fraction of the largest are numerical noise.
const RELATIVE_RANK_CUTOFF: f64 = 1e-12;

/// Slack when comparing a cumulative variance ratio to a threshold, so a
/// sum that lands one rounding step under 1.0 still counts as complete.
pub const CUMULATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPca {
    mean: Vec<f64>,
    /// Row-major, one row per stored axis; at most `k_max` rows.
    components: Vec<f64>,
    singular_values: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
}

impl ChannelPca {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Number of retained components.
    pub fn k_max(&self) -> usize {
        self.singular_values.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Number of axes whose direction is stored; `k_max` after fitting,
    /// fewer after [`ChannelPca::truncated`].
    pub fn stored_axes(&self) -> usize {
        self.components.len() / self.width().max(1)
    }

    /// Keeps the first `k` axes. Singular values and variance ratios stay
    /// complete.
    pub fn truncated(&self, k: usize) -> ChannelPca {
        let k = k.min(self.stored_axes());
        ChannelPca {
            components: self.components[..k * self.width()].to_vec(),
            ..self.clone()
        }
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.components[i * w..(i + 1) * w]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    fn from_parts(mean: Vec<f64>, components: Vec<f64>, singular_values: Vec<f64>) -> Result<Self> {
        let (k, w) = (singular_values.len(), mean.len());
        if components.len() % w.max(1) != 0 || components.len() > k * w {
            return Err(Error::invalid(format!(
                "{} component values do not form at most {k} rows of width {w}",
                components.len()
            )));
        }
        let total: f64 = singular_values.iter().map(|s| s * s).sum();
        let explained_variance_ratio = if total > 0.0 {
            singular_values.iter().map(|s| s * s / total).collect()
        } else {
            Vec::new()
        };
        Ok(ChannelPca {
            mean,
            components,
            singular_values,
            explained_variance_ratio,
        })
    }
}

fn channel_dims(channel: &Tensor) -> Result<(usize, usize)> {
    channel.expect_rank(2, "channel PCA")?;
    Ok((channel.shape()[0], channel.shape()[1]))
}

/// Column means; a constant column yields its value exactly.
fn column_means(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|j| {
            let first = data[j];
            if (0..rows).all(|i| data[i * cols + j] == first) {
                first
            } else {
                (0..rows).map(|i| data[i * cols + j]).sum::<f64>() / rows as f64
            }
        })
        .collect()
}

pub fn fit_channel_pca(channel: &Tensor) -> Result<ChannelPca> {
    let (rows, cols) = channel_dims(channel)?;
    channel.check_finite()?;
    let data = channel.data();
    let mean = column_means(data, rows, cols);
    let centered: Vec<f64> = data.iter().enumerate().map(|(i, &x)| x - mean[i % cols]).collect();

    let svd = jacobi::right_svd(&centered, rows, cols);
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let keep = svd
        .sigma
        .iter()
        .take(rows.min(cols))
        .take_while(|&&s| sigma_max > 0.0 && s >= RELATIVE_RANK_CUTOFF * sigma_max)
        .count();

    let mut components = Vec::with_capacity(keep * cols);
    for v in svd.vectors.iter().take(keep) {
        // sign convention: the entry of largest magnitude is non-negative
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| sign * x));
    }
    ChannelPca::from_parts(mean, components, svd.sigma[..keep].to_vec())
}

/// Smallest `k` whose cumulative explained-variance ratio reaches
/// `threshold` (within [`CUMULATIVE_SLACK`]); 0 for a constant channel.
pub fn components_for_variance(pca: &ChannelPca, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("variance threshold must lie in (0, 1], got {threshold}")));
    }
    let curve = variance_curve(pca);
    Ok(curve
        .iter()
        .find(|&&(_, cum)| cum >= threshold - CUMULATIVE_SLACK)
        .map_or(curve.len(), |&(k, _)| k))
}

/// `(k, cumulative ratio)` for `k = 1..=k_max`.
pub fn variance_curve(pca: &ChannelPca) -> Vec<(usize, f64)> {
    pca.explained_variance_ratio
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .enumerate()
        .map(|(i, c)| (i + 1, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedChannel {
    pub pca: ChannelPca,
    /// Number of coefficient columns actually stored (`<= k_max`).
    pub k: usize,
    /// Row-major `H x k`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedImage {
    /// `[C, H, W]` of the source image.
    pub shape: [usize; 3],
    pub channels: Vec<CompressedChannel>,
}

impl CompressedImage {
    /// Scalar values needed to store the image: coefficients, basis rows,
    /// mean rows, singular values and the three shape entries.
    pub fn payload_len(&self) -> usize {
        let [_, h, w] = self.shape;
        3 + self
            .channels
            .iter()
            .map(|c| h * c.k + c.k * w + w + c.pca.k_max())
            .sum::<usize>()
    }
}

fn image_dims(image: &Tensor) -> Result<[usize; 3]> {
    image.expect_rank(3, "compress")?;
    Ok([image.shape()[0], image.shape()[1], image.shape()[2]])
}

/// Projects every channel onto its first `k` principal axes. Channels of
/// numerical rank below `k` keep all their retained axes.
pub fn compress(image: &Tensor, k: usize) -> Result<CompressedImage> {
    let [c, h, w] = image_dims(image)?;
    let limit = h.min(w);
    if k == 0 || k > limit {
        return Err(Error::invalid(format!(
            "component count {k} out of range: valid range is 1..={limit}"
        )));
    }
    let mut channels = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = image.index_axis0(ch)?;
        let pca = fit_channel_pca(&plane)?;
        let kk = k.min(pca.k_max());
        let mut coefficients = vec![0.0; h * kk];
        for i in 0..h {
            let row = &plane.data()[i * w..(i + 1) * w];
            for j in 0..kk {
                coefficients[i * kk + j] = row
                    .iter()
                    .zip(pca.mean())
                    .zip(pca.component(j))
                    .map(|((x, m), v)| (x - m) * v)
                    .sum();
            }
        }
        channels.push(CompressedChannel {
            pca: pca.truncated(kk),
            k: kk,
            coefficients,
        });
    }
    Ok(CompressedImage {
        shape: [c, h, w],
        channels,
    })
}

pub fn reconstruct(compressed: &CompressedImage) -> Result<Tensor> {
    let [c, h, w] = compressed.shape;
    if compressed.channels.len() != c {
        return Err(Error::invalid(format!(
            "{} channel records for a {c}-channel image",
            compressed.channels.len()
        )));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for (idx, ch) in compressed.channels.iter().enumerate() {
        if ch.pca.width() != w || ch.k > ch.pca.stored_axes() || ch.coefficients.len() != h * ch.k {
            return Err(Error::invalid(format!(
                "channel {idx}: coefficients ({} values, k = {}) and basis ({} x {}) do not fit a {h} x {w} plane",
                ch.coefficients.len(),
                ch.k,
                ch.pca.stored_axes(),
                ch.pca.width()
            )));
        }
        for i in 0..h {
            let mut row = ch.pca.mean().to_vec();
            for j in 0..ch.k {
                let coef = ch.coefficients[i * ch.k + j];
                for (r, v) in row.iter_mut().zip(ch.pca.component(j)) {
                    *r += coef * v;
                }
            }
            data.extend(row);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// Writes one NPY array per field (`mean_c{i}`, `components_c{i}`,
/// `coeffs_c{i}`, `sigma_c{i}`) plus the `[C, H, W]` header `shape.npy`
/// into `dir`.
pub fn save_compressed(compressed: &CompressedImage, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let [c, h, w] = compressed.shape;
    write_npy(
        &Tensor::new(vec![3], vec![c as f64, h as f64, w as f64])?,
        Dtype::F64,
        dir.join("shape.npy"),
    )?;
    for (i, ch) in compressed.channels.iter().enumerate() {
        write_npy(&Tensor::new(vec![w], ch.pca.mean().to_vec())?, Dtype::F64, dir.join(format!("mean_c{i}.npy")))?;
        // NPY extents are positive, so an empty basis or coefficient block is
        // written as a single zero row; `sigma_c{i}` holds `[k_max, k, sigma...]`
        // and says how much of each array is real.
        let k_max = ch.pca.k_max();
        write_npy(
            &Tensor::new(vec![ch.pca.stored_axes().max(1), w], padded(ch.pca.components(), w))?,
            Dtype::F64,
            dir.join(format!("components_c{i}.npy")),
        )?;
        write_npy(
            &Tensor::new(vec![h, ch.k.max(1)], padded(&ch.coefficients, h))?,
            Dtype::F64,
            dir.join(format!("coeffs_c{i}.npy")),
        )?;
        let mut sigma = vec![k_max as f64, ch.k as f64];
        sigma.extend_from_slice(ch.pca.singular_values());
        write_npy(&Tensor::new(vec![sigma.len()], sigma)?, Dtype::F64, dir.join(format!("sigma_c{i}.npy")))?;
    }
    Ok(())
}

fn padded(values: &[f64], len_if_empty: usize) -> Vec<f64> {
    if values.is_empty() {
        vec![0.0; len_if_empty]
    } else {
        values.to_vec()
    }
}

pub fn load_compressed(dir: impl AsRef<Path>) -> Result<CompressedImage> {
    let dir = dir.as_ref();
    let (shape, _) = read_npy(dir.join("shape.npy"))?;
    let dims: Vec<usize> = shape.data().iter().map(|&d| d as usize).collect();
    let [c, h, w] = <[usize; 3]>::try_from(dims.as_slice())
        .map_err(|_| Error::invalid(format!("shape header must hold 3 entries, got {dims:?}")))?;
    let mut channels = Vec::with_capacity(c);
    for i in 0..c {
        let (mean, _) = read_npy(dir.join(format!("mean_c{i}.npy")))?;
        let (components, _) = read_npy(dir.join(format!("components_c{i}.npy")))?;
        let (coeffs, _) = read_npy(dir.join(format!("coeffs_c{i}.npy")))?;
        let (sigma, _) = read_npy(dir.join(format!("sigma_c{i}.npy")))?;
        let s = sigma.data();
        if s.len() < 2 || s.len() != 2 + s[0] as usize {
            return Err(Error::invalid(format!("channel {i}: malformed sigma header")));
        }
        let (k_max, k) = (s[0] as usize, s[1] as usize);
        if k > k_max {
            return Err(Error::invalid(format!("channel {i}: {k} stored components exceed rank {k_max}")));
        }
        let comps = components.data()[..(k * w).min(components.len())].to_vec();
        let coefficients = coeffs.data()[..(h * k).min(coeffs.len())].to_vec();
        let pca = ChannelPca::from_parts(mean.into_data(), comps, s[2..].to_vec())?;
        channels.push(CompressedChannel { pca, k, coefficients });
    }
    Ok(CompressedImage {
        shape: [c, h, w],
        channels,
    })
}
