use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::kernels;
pub use super::kernels::ConvSpec;
use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Softmax,
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "softmax" => Ok(ActivationKind::Softmax),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softmax => "softmax",
        })
    }
}

/// Output of a training-mode batch norm: the normalised tensor plus the
/// batch statistics used, so callers can update running averages.
#[derive(Debug, Clone)]
pub struct BatchNormOutput {
    pub output: Var,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.custom(&[a, b], value, Box::new(|g| Ok(vec![g.clone(), g.clone()]))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.custom(&[a, b], value, Box::new(|g| Ok(vec![g.clone(), g.scale(-1.0)]))))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let value = av.mul(&bv)?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(move |g| Ok(vec![g.mul(&bv)?, g.mul(&av)?])),
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.custom(&[a], value, Box::new(move |g| Ok(vec![g.scale(k)])))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let value = Tensor::scalar(self.value(a).sum());
        self.custom(
            &[a],
            value,
            Box::new(move |g| Tensor::full(shape.clone(), g.data()[0]).map(|t| vec![t])),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let old = self.shape(a).to_vec();
        let value = self.value(a).reshape(shape)?;
        Ok(self.custom(&[a], value, Box::new(move |g| g.reshape(old.clone()).map(|t| vec![t]))))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let (&b, rest) = shape
            .split_first()
            .ok_or_else(|| Error::invalid("cannot flatten a 0-d tensor"))?;
        let d = rest.iter().product();
        self.reshape(a, vec![b, d])
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let (x, w) = (self.value(input).clone(), self.value(kernels).clone());
        let value = kernels::conv2d_forward(&x, &w, self.value(bias), &spec)?;
        Ok(self.custom(
            &[input, kernels, bias],
            value,
            Box::new(move |g| {
                let (dx, dw, db) = kernels::conv2d_backward(&x, &w, g, &spec)?;
                Ok(vec![dx, dw, db])
            }),
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (value, argmax) = kernels::maxpool2d_forward(self.value(input), window)?;
        Ok(self.custom(
            &[input],
            value,
            Box::new(move |g| kernels::maxpool2d_backward(&shape, &argmax, g).map(|t| vec![t])),
        ))
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w) = (self.value(input).clone(), self.value(weight).clone());
        let value = kernels::affine_forward(&x, &w, self.value(bias))?;
        Ok(self.custom(
            &[input, weight, bias],
            value,
            Box::new(move |g| {
                let (dx, dw, db) = kernels::affine_backward(&x, &w, g)?;
                Ok(vec![dx, dw, db])
            }),
        ))
    }

    pub fn activation(&mut self, kind: ActivationKind, input: Var) -> Result<Var> {
        match kind {
            ActivationKind::Relu => Ok(self.relu(input)),
            ActivationKind::Sigmoid => Ok(self.sigmoid(input)),
            ActivationKind::Softmax => self.softmax(input),
        }
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input).clone();
        let value = x.map(|v| v.max(0.0));
        self.custom(
            &[input],
            value,
            Box::new(move |g| Ok(vec![g.zip_map(&x, "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?])),
        )
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = self.value(input).map(kernels::sigmoid);
        let out = y.clone();
        self.custom(
            &[input],
            y,
            Box::new(move |g| Ok(vec![g.zip_map(&out, "sigmoid", |gv, yv| gv * yv * (1.0 - yv))?])),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let y = kernels::softmax_forward(self.value(input))?;
        let out = y.clone();
        Ok(self.custom(
            &[input],
            y,
            Box::new(move |g| kernels::softmax_backward(&out, g).map(|t| vec![t])),
        ))
    }

    /// Training-mode batch normalisation using the batch statistics.
    pub fn batchnorm2d(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<BatchNormOutput> {
        let gv = self.value(gamma).clone();
        let (value, cache) = kernels::batchnorm2d_forward(self.value(input), &gv, self.value(beta), eps)?;
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let output = self.custom(
            &[input, gamma, beta],
            value,
            Box::new(move |g| {
                let (dx, dg, db) = kernels::batchnorm2d_backward(&cache, &gv, g)?;
                Ok(vec![dx, dg, db])
            }),
        );
        Ok(BatchNormOutput { output, mean, var })
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batchnorm2d_inference(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("batchnorm eps must be positive, got {eps}")));
        }
        let x = self.value(input).clone();
        x.expect_rank(4, "batchnorm2d")?;
        let s = x.shape().to_vec();
        let (c, hw) = (s[1], s[2] * s[3]);
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        if gv.shape() != [c] || bv.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d_inference",
                lhs: s,
                rhs: gv.shape().to_vec(),
            });
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let channel = move |i: usize| (i / hw) % c;
        let normalized = Tensor::from_fn(s.clone(), |i| (x.data()[i] - mean[channel(i)]) * inv_std[channel(i)])?;
        let value = Tensor::from_fn(s.clone(), |i| {
            gv.data()[channel(i)] * normalized.data()[i] + bv.data()[channel(i)]
        })?;
        Ok(self.custom(
            &[input, gamma, beta],
            value,
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for (i, &gi) in g.data().iter().enumerate() {
                    let ch = channel(i);
                    dx[i] = gi * gv.data()[ch] * inv_std[ch];
                    dg[ch] += gi * normalized.data()[i];
                    db[ch] += gi;
                }
                Ok(vec![
                    Tensor::new(g.shape().to_vec(), dx)?,
                    Tensor::new(vec![c], dg)?,
                    Tensor::new(vec![c], db)?,
                ])
            }),
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let value = kernels::global_avg_pool_forward(self.value(input))?;
        Ok(self.custom(
            &[input],
            value,
            Box::new(move |g| kernels::global_avg_pool_backward(&shape, g).map(|t| vec![t])),
        ))
    }
}
