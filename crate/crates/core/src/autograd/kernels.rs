//! Forward and backward kernels on raw tensors.
//!
//! These are the numeric routines behind the differentiable ops in
//! [`Tape`](super::Tape). They are deterministic: loops run in a fixed order
//! and batch reductions are summed sample by sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyper-parameters of a 2-D convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// `filters` filters of size `kernel_size`, stride 1, "same" padding for
    /// odd kernels.
    pub fn same(filters: usize, kernel_size: usize) -> Self {
        ConvSpec {
            filters,
            kernel_size,
            stride: 1,
            padding: kernel_size / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::invalid(format!(
                "conv spec needs positive filters, kernel size and stride: {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((input + 2*padding - kernel) / stride) + 1`, rejected when
    /// smaller than 1.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::InvalidShape {
                shape: vec![input],
                reason: format!(
                    "kernel {} does not fit input extent {input} with padding {}",
                    self.kernel_size, self.padding
                ),
            });
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }
}

/// `out[m,n] = a[m,k] * b[k,n]`, accumulated into `out`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] * b[k,n]^T`.
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + j] += dot;
        }
    }
}

struct ConvGeometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, kernels: &Tensor, spec: &ConvSpec) -> Result<Self> {
        input.expect_rank(4, "conv2d input")?;
        kernels.expect_rank(4, "conv2d kernels")?;
        let [batch, channels, height, width] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
        let ks = kernels.shape();
        if ks[1] != channels || ks[2] != ks[3] || ks[2] != spec.kernel_size || ks[0] != spec.filters {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.shape().to_vec(),
                rhs: ks.to_vec(),
            });
        }
        Ok(ConvGeometry {
            batch,
            channels,
            height,
            width,
            filters: spec.filters,
            k: spec.kernel_size,
            out_h: spec.output_extent(height)?,
            out_w: spec.output_extent(width)?,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds sample `b` into a `[C*K*K, OH*OW]` column matrix.
    fn im2col(&self, input: &[f64], b: usize, cols: &mut [f64]) {
        let area = self.out_area();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let src = &input[(b * self.channels + c) * plane..(b * self.channels + c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * area..(row + 1) * area];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                src[iy as usize * self.width + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column matrix back into sample `b` of `grad_input`.
    fn col2im(&self, cols: &[f64], b: usize, grad_input: &mut [f64]) {
        let area = self.out_area();
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let dst = &mut grad_input[(b * self.channels + c) * plane..(b * self.channels + c + 1) * plane];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * area..(row + 1) * area];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            dst[iy as usize * self.width + ix as usize] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) with zero padding and per-filter bias.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernels, spec)?;
    if bias.shape() != [g.filters] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: vec![g.filters],
            rhs: bias.shape().to_vec(),
        });
    }
    let area = g.out_area();
    let mut out = vec![0.0; g.batch * g.filters * area];
    let mut cols = vec![0.0; g.patch_len() * area];
    for b in 0..g.batch {
        g.im2col(input.data(), b, &mut cols);
        let out_b = &mut out[b * g.filters * area..(b + 1) * g.filters * area];
        for (f, chunk) in out_b.chunks_mut(area).enumerate() {
            chunk.fill(bias.data()[f]);
        }
        matmul_acc(kernels.data(), &cols, out_b, g.filters, g.patch_len(), area);
    }
    Tensor::new(vec![g.batch, g.filters, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new(input, kernels, spec)?;
    let area = g.out_area();
    if grad_out.shape() != [g.batch, g.filters, g.out_h, g.out_w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: vec![g.batch, g.filters, g.out_h, g.out_w],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut d_input = vec![0.0; input.len()];
    let mut d_kernels = vec![0.0; kernels.len()];
    let mut d_bias = vec![0.0; g.filters];
    let mut cols = vec![0.0; g.patch_len() * area];
    let mut d_cols = vec![0.0; g.patch_len() * area];
    for b in 0..g.batch {
        let go = &grad_out.data()[b * g.filters * area..(b + 1) * g.filters * area];
        for (f, chunk) in go.chunks(area).enumerate() {
            d_bias[f] += chunk.iter().sum::<f64>();
        }
        g.im2col(input.data(), b, &mut cols);
        matmul_a_bt_acc(go, &cols, &mut d_kernels, g.filters, area, g.patch_len());
        d_cols.fill(0.0);
        matmul_at_b_acc(kernels.data(), go, &mut d_cols, g.filters, g.patch_len(), area);
        g.col2im(&d_cols, b, &mut d_input);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), d_input)?,
        Tensor::new(kernels.shape().to_vec(), d_kernels)?,
        Tensor::new(vec![g.filters], d_bias)?,
    ))
}

/// Non-overlapping max pooling. Returns the pooled tensor and, for every
/// output cell, the flat input index of the first maximal element of its
/// window in row-major order.
pub fn maxpool2d_forward(input: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank(4, "maxpool2d")?;
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("spatial extents must be divisible by pooling window {window}"),
        });
    }
    let (oh, ow) = (h / window, w / window);
    let data = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * window + dy) * w + ox * window + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut d = Tensor::zeros(input_shape.to_vec())?;
    let dd = d.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dd[idx] += g;
    }
    Ok(d)
}

/// `input[B,D] * weight[D,M] + bias[M]`.
pub fn affine_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "affine input")?;
    weight.expect_rank(2, "affine weight")?;
    let (b, d) = (input.shape()[0], input.shape()[1]);
    let (d2, m) = (weight.shape()[0], weight.shape()[1]);
    if d != d2 {
        return Err(Error::ShapeMismatch {
            op: "affine",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [m] {
        return Err(Error::ShapeMismatch {
            op: "affine bias",
            lhs: vec![m],
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out: Vec<f64> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    matmul_acc(input.data(), weight.data(), &mut out, b, d, m);
    Tensor::new(vec![b, m], out)
}

pub fn affine_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d) = (input.shape()[0], input.shape()[1]);
    let m = weight.shape()[1];
    let mut d_input = vec![0.0; b * d];
    matmul_a_bt_acc(grad_out.data(), weight.data(), &mut d_input, b, m, d);
    let mut d_weight = vec![0.0; d * m];
    matmul_at_b_acc(input.data(), grad_out.data(), &mut d_weight, b, d, m);
    let mut d_bias = vec![0.0; m];
    for row in grad_out.data().chunks(m) {
        for (acc, g) in d_bias.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((
        Tensor::new(vec![b, d], d_input)?,
        Tensor::new(vec![d, m], d_weight)?,
        Tensor::new(vec![m], d_bias)?,
    ))
}

/// Logistic function in a form that never overflows `exp`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the last axis.
pub fn softmax_forward(input: &Tensor) -> Result<Tensor> {
    let last = *input
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("softmax needs at least one axis"))?;
    let mut out = input.data().to_vec();
    for row in out.chunks_mut(last) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let last = *output.shape().last().unwrap_or(&1);
    let mut d = vec![0.0; output.len()];
    for ((y, g), dst) in output
        .data()
        .chunks(last)
        .zip(grad_out.data().chunks(last))
        .zip(d.chunks_mut(last))
    {
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((dv, yv), gv) in dst.iter_mut().zip(y).zip(g) {
            *dv = yv * (gv - dot);
        }
    }
    Tensor::new(output.shape().to_vec(), d)
}

/// Intermediate values of a training-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub mean: Vec<f64>,
    /// Biased (population) variance over batch and spatial axes.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn bn_dims(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(4, "batchnorm2d")?;
    let s = input.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d",
            lhs: gamma.shape().to_vec(),
            rhs: beta.shape().to_vec(),
        });
    }
    Ok((b, c, hw))
}

/// Per-channel standardisation over batch and spatial axes, then
/// `gamma * x_hat + beta`.
pub fn batchnorm2d_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("batchnorm eps must be positive, got {eps}")));
    }
    let (b, c, hw) = bn_dims(input, gamma, beta)?;
    let n = (b * hw) as f64;
    let x = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            s += x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().sum::<f64>();
        }
        mean[ch] = s / n;
        let mut sq = 0.0;
        for bi in 0..b {
            sq += x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
        var[ch] = sq / n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let range = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
            for i in range {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BatchNormCache {
            normalized: Tensor::new(input.shape().to_vec(), normalized)?,
            mean,
            var,
            inv_std,
        },
    ))
}

pub fn batchnorm2d_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let s = grad_out.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let n = (b * hw) as f64;
    let xh = cache.normalized.data();
    let dy = grad_out.data();
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                d_gamma[ch] += dy[i] * xh[i];
                d_beta[ch] += dy[i];
            }
        }
    }
    let mut d_input = vec![0.0; dy.len()];
    for bi in 0..b {
        for ch in 0..c {
            let g = gamma.data()[ch];
            // sum(dxhat) = g * d_beta, sum(dxhat * xhat) = g * d_gamma
            let k = g * cache.inv_std[ch] / n;
            for i in (bi * c + ch) * hw..(bi * c + ch + 1) * hw {
                d_input[i] = k * (n * dy[i] - d_beta[ch] - xh[i] * d_gamma[ch]);
            }
        }
    }
    Ok((
        Tensor::new(s.to_vec(), d_input)?,
        Tensor::new(vec![c], d_gamma)?,
        Tensor::new(vec![c], d_beta)?,
    ))
}

/// Mean over the spatial axes: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    input.expect_rank(4, "global_avg_pool")?;
    let s = input.shape();
    let hw = s[2] * s[3];
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![s[0], s[1]], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let hw = input_shape[2] * input_shape[3];
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
        .collect();
    Tensor::new(input_shape.to_vec(), data)
}
