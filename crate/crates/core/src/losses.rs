//! Inverse-frequency class weights and the weighted cross-entropy losses.
//!
//! Both losses take probabilities (the output of a softmax or sigmoid head)
//! shaped `[B, C]` or `[C]`, clamp them to `[PROB_FLOOR, 1 - PROB_FLOOR]`
//! before taking logs, and average over the batch. The gradient is
//! evaluated at the clamped probability and passed straight through the
//! clamp.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::dataset::{DatasetManifest, BINARY_CLASS_NAMES, LABEL_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    names: Vec<String>,
    weights: Vec<f64>,
}

impl ClassWeights {
    /// All-ones weights, which turn both losses into their unweighted forms.
    pub fn uniform(classes: usize) -> Self {
        ClassWeights {
            names: (0..classes).map(|i| format!("class {i}")).collect(),
            weights: vec![1.0; classes],
        }
    }

    pub fn new(names: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if names.len() != weights.len() || weights.is_empty() {
            return Err(Error::invalid(format!(
                "{} class names for {} weights",
                names.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("class weights must be positive and finite, got {w}")));
        }
        Ok(ClassWeights { names, weights })
    }

    /// Weights for the two derived classes, counted over `manifest`.
    pub fn for_binary(manifest: &DatasetManifest) -> Result<Self> {
        let names = BINARY_CLASS_NAMES.map(String::from).to_vec();
        compute_named_class_weights(names, &manifest.binary_counts(), manifest.total())
    }

    /// Per-disease weights, counted over `manifest`.
    pub fn for_multilabel(manifest: &DatasetManifest) -> Result<Self> {
        let names = LABEL_NAMES.map(String::from).to_vec();
        compute_named_class_weights(names, manifest.label_counts(), manifest.total())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        ClassWeights::new(self.names.clone(), self.weights.iter().map(|w| w * lambda).collect())
    }

    /// Two-column `label,weight` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["label", "weight"])?;
        for (name, weight) in self.names.iter().zip(&self.weights) {
            w.write_record([name.as_str(), &format!("{weight:?}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let (mut names, mut weights) = (Vec::new(), Vec::new());
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = || Error::Metadata { line: i + 2, message: "expected `label,weight`".into() };
            let name = row.get(0).ok_or_else(bad)?;
            let weight = row.get(1).and_then(|w| f64::from_str(w.trim()).ok()).ok_or_else(bad)?;
            names.push(name.to_string());
            weights.push(weight);
        }
        ClassWeights::new(names, weights)
    }
}

/// `w_i = total / counts[i]` for anonymous classes.
pub fn compute_class_weights(counts: &[usize], total: usize) -> Result<ClassWeights> {
    let names = (0..counts.len()).map(|i| format!("class {i}")).collect();
    compute_named_class_weights(names, counts, total)
}

pub fn compute_named_class_weights(names: Vec<String>, counts: &[usize], total: usize) -> Result<ClassWeights> {
    if total == 0 {
        return Err(Error::invalid("total sample count must be positive"));
    }
    if names.len() != counts.len() {
        return Err(Error::invalid(format!("{} class names for {} counts", names.len(), counts.len())));
    }
    if let Some(index) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroClassCount { index, name: names[index].clone() });
    }
    let weights = counts.iter().map(|&n| total as f64 / n as f64).collect();
    ClassWeights::new(names, weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `-Σ w_i y_i log p_i`; pairs with a softmax head.
    WeightedCrossEntropy,
    /// `-Σ [w_i y_i log p_i + (1 - y_i) log(1 - p_i)]`; pairs with a sigmoid head.
    WeightedBce,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-ce" | "weighted-cross-entropy" => Ok(LossKind::WeightedCrossEntropy),
            "weighted-bce" => Ok(LossKind::WeightedBce),
            other => Err(Error::invalid(format!(
                "unknown loss `{other}` (expected weighted-ce or weighted-bce)"
            ))),
        }
    }
}

/// Batch size and class count, after checking that shapes line up.
fn loss_dims(probs: &Tensor, targets: &Tensor, weights: &ClassWeights) -> Result<(usize, usize)> {
    probs.expect_same_shape(targets, "loss")?;
    let (b, c) = match probs.shape() {
        [c] => (1, *c),
        [b, c] => (*b, *c),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "loss expects [C] or [B, C] probabilities".into(),
            })
        }
    };
    if c != weights.len() {
        return Err(Error::ShapeMismatch {
            op: "loss weights",
            lhs: probs.shape().to_vec(),
            rhs: vec![weights.len()],
        });
    }
    Ok((b, c))
}

/// Per-element loss term and its derivative with respect to `p`.
fn term(kind: LossKind, p: f64, y: f64, w: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    match kind {
        LossKind::WeightedCrossEntropy => (-w * y * p.ln(), -w * y / p),
        LossKind::WeightedBce => (
            -(w * y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
            -w * y / p + (1.0 - y) / (1.0 - p),
        ),
    }
}

fn value_and_grad(
    kind: LossKind,
    probs: &Tensor,
    targets: &Tensor,
    weights: &ClassWeights,
) -> Result<(f64, Tensor)> {
    let (b, c) = loss_dims(probs, targets, weights)?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * c);
    for (i, (&p, &y)) in probs.data().iter().zip(targets.data()).enumerate() {
        let (l, g) = term(kind, p, y, weights.weights[i % c]);
        loss += l;
        grad.push(g * inv_b);
    }
    Ok((loss * inv_b, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// Loss value without recording anything on a tape.
pub fn loss_value(kind: LossKind, probs: &Tensor, targets: &Tensor, weights: &ClassWeights) -> Result<f64> {
    value_and_grad(kind, probs, targets, weights).map(|(l, _)| l)
}

pub fn weighted_cross_entropy(
    tape: &mut Tape,
    probs: Var,
    targets: &Tensor,
    weights: &ClassWeights,
) -> Result<Var> {
    record(tape, LossKind::WeightedCrossEntropy, probs, targets, weights)
}

pub fn weighted_bce_multilabel(
    tape: &mut Tape,
    probs: Var,
    targets: &Tensor,
    weights: &ClassWeights,
) -> Result<Var> {
    record(tape, LossKind::WeightedBce, probs, targets, weights)
}

/// Records the loss selected by `kind` as a scalar node.
pub fn record(tape: &mut Tape, kind: LossKind, probs: Var, targets: &Tensor, weights: &ClassWeights) -> Result<Var> {
    let (loss, grad) = value_and_grad(kind, tape.value(probs), targets, weights)?;
    Ok(tape.custom(
        &[probs],
        Tensor::scalar(loss),
        Box::new(move |g| Ok(vec![grad.scale(g.data()[0])])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_frequency_examples() {
        assert_eq!(compute_class_weights(&[50, 25, 25], 100).unwrap().weights(), &[2.0, 4.0, 4.0]);
        assert_eq!(compute_class_weights(&[50, 50], 100).unwrap().weights(), &[2.0, 2.0]);
        match compute_class_weights(&[10, 0], 10) {
            Err(Error::ZeroClassCount { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(compute_class_weights(&[1], 0).is_err());
    }

    #[test]
    fn single_term_examples() {
        let half = Tensor::new(vec![1], vec![0.5]).unwrap();
        let one = Tensor::new(vec![1], vec![1.0]).unwrap();
        let w1 = ClassWeights::uniform(1);
        let ce = loss_value(LossKind::WeightedCrossEntropy, &half, &one, &w1).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
        let w2 = ClassWeights::new(vec!["a".into()], vec![2.0]).unwrap();
        let bce = loss_value(LossKind::WeightedBce, &half, &one, &w2).unwrap();
        assert!((bce - 2.0 * 2f64.ln()).abs() < 1e-15);

        let hot = Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        let perfect = loss_value(LossKind::WeightedCrossEntropy, &hot, &hot, &ClassWeights::uniform(3)).unwrap();
        assert!(perfect < 1e-11);
        let zero = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(loss_value(LossKind::WeightedBce, &zero, &zero, &w1).unwrap() < 1e-11);
    }

    #[test]
    fn weights_csv_round_trip() {
        let w = compute_named_class_weights(vec!["No Finding".into(), "Disease Present".into()], &[3, 7], 10).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("label,weight\n"));
        assert_eq!(ClassWeights::read_csv(buf.as_slice()).unwrap(), w);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let p = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let y = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(loss_value(LossKind::WeightedBce, &p, &y, &ClassWeights::uniform(2)).is_err());
        assert!(loss_value(LossKind::WeightedBce, &p, &p, &ClassWeights::uniform(3)).is_err());
    }
}
