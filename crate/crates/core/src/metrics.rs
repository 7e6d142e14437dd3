//! ROC curves, AUC and thresholded classification metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Points from threshold `+inf` (at `(0, 0)`) down to `-inf` (at `(1, 1)`),
/// one per distinct score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    points: Vec<(f64, f64)>,
    /// `thresholds[i]` produced `points[i + 1]`.
    thresholds: Vec<f64>,
}

impl RocCurve {
    /// `(false-positive rate, true-positive rate)` pairs.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "roc_curve",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::RocUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn merge(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// Precision, recall and F1. A rate whose denominator is zero is
    /// reported as 0 and flagged.
    pub fn rates(&self) -> Rates {
        let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (precision, precision_undefined) = ratio(self.tp, self.tp + self.fp);
        let (recall, recall_undefined) = ratio(self.tp, self.tp + self.fn_);
        let (f1, f1_undefined) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Rates {
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl Rates {
    fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.precision_undefined {
            f.push("precision");
        }
        if self.recall_undefined {
            f.push("recall");
        }
        if self.f1_undefined {
            f.push("f1");
        }
        f.join("|")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub name: String,
    /// `None` when the label has only one class in the evaluated set.
    pub auc: Option<f64>,
    pub rates: Rates,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub labels: Vec<LabelMetrics>,
    /// Fraction of correct element-wise predictions.
    pub accuracy: f64,
    pub macro_rates: Rates,
    pub micro_rates: Rates,
    pub micro_counts: ConfusionCounts,
    /// Mean over labels with a defined ROC.
    pub mean_auc: Option<f64>,
    /// Labels left out of `mean_auc`.
    pub auc_excluded: Vec<String>,
    pub threshold: f64,
}

/// Metrics for `probs` and `labels`, both `[B, C]` (or `[B]` for a single
/// label). A sample is predicted positive when its probability is at least
/// `threshold`.
pub fn classification_report(probs: &Tensor, labels: &Tensor, threshold: f64) -> Result<MetricsReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    probs.expect_same_shape(labels, "classification_report")?;
    let (b, c) = match probs.shape() {
        [b] => (*b, 1),
        [b, c] => (*b, *c),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "expected [B] or [B, C] probabilities".into(),
            })
        }
    };
    probs.check_finite()?;

    let mut per_label = Vec::with_capacity(c);
    let mut micro_counts = ConfusionCounts::default();
    let mut aucs = Vec::new();
    let mut auc_excluded = Vec::new();
    for j in 0..c {
        let scores: Vec<f64> = (0..b).map(|i| probs.data()[i * c + j]).collect();
        let truth: Vec<bool> = (0..b).map(|i| labels.data()[i * c + j] >= 0.5).collect();
        let mut counts = ConfusionCounts::default();
        for (&s, &t) in scores.iter().zip(&truth) {
            match (s >= threshold, t) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, false) => counts.tn += 1,
                (false, true) => counts.fn_ += 1,
            }
        }
        let name = format!("label {j}");
        let label_auc = match roc_curve(&scores, &truth) {
            Ok(curve) => Some(auc(&curve)),
            Err(Error::RocUndefined) => None,
            Err(e) => return Err(e),
        };
        match label_auc {
            Some(a) => aucs.push(a),
            None => auc_excluded.push(name.clone()),
        }
        micro_counts = micro_counts.merge(counts);
        per_label.push(LabelMetrics {
            name,
            auc: label_auc,
            rates: counts.rates(),
            counts,
        });
    }

    let mean = |f: &dyn Fn(&Rates) -> f64| per_label.iter().map(|l| f(&l.rates)).sum::<f64>() / c as f64;
    let macro_rates = Rates {
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        f1: mean(&|r| r.f1),
        precision_undefined: per_label.iter().any(|l| l.rates.precision_undefined),
        recall_undefined: per_label.iter().any(|l| l.rates.recall_undefined),
        f1_undefined: per_label.iter().any(|l| l.rates.f1_undefined),
    };
    Ok(MetricsReport {
        accuracy: (micro_counts.tp + micro_counts.tn) as f64 / (b * c) as f64,
        macro_rates,
        micro_rates: micro_counts.rates(),
        micro_counts,
        mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        auc_excluded,
        labels: per_label,
        threshold,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Replaces the default `label {j}` names.
    pub fn with_label_names<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        if names.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "{} names for {} labels",
                names.len(),
                self.labels.len()
            )));
        }
        let renamed: Vec<(String, String)> = self
            .labels
            .iter_mut()
            .zip(names)
            .map(|(l, n)| (std::mem::replace(&mut l.name, n.as_ref().to_string()), l.name.clone()))
            .collect();
        for excluded in &mut self.auc_excluded {
            if let Some((_, new)) = renamed.iter().find(|(old, _)| old == excluded) {
                *excluded = new.clone();
            }
        }
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,label,auc,precision,recall,f1,accuracy,tp,fp,tn,fn,threshold,undefined\n");
        for l in &self.labels {
            let c = l.counts;
            let acc = (c.tp + c.tn) as f64 / c.total() as f64;
            let _ = writeln!(
                out,
                "label,{},{},{},{},{},{acc},{},{},{},{},{},{}",
                csv_field(&l.name),
                opt(l.auc),
                l.rates.precision,
                l.rates.recall,
                l.rates.f1,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                self.threshold,
                l.rates.flags()
            );
        }
        let m = &self.macro_rates;
        let _ = writeln!(
            out,
            "macro,,{},{},{},{},{},,,,,{},{}",
            opt(self.mean_auc),
            m.precision,
            m.recall,
            m.f1,
            self.accuracy,
            self.threshold,
            m.flags()
        );
        let (m, c) = (&self.micro_rates, self.micro_counts);
        let _ = writeln!(
            out,
            "micro,,,{},{},{},{},{},{},{},{},{},{}",
            m.precision,
            m.recall,
            m.f1,
            self.accuracy,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            self.threshold,
            m.flags()
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "threshold  {}", self.threshold);
        let _ = writeln!(out, "accuracy   {:.4}", self.accuracy);
        match self.mean_auc {
            Some(a) => {
                let _ = writeln!(out, "mean AUC   {a:.4}");
            }
            None => out.push_str("mean AUC   undefined\n"),
        }
        if !self.auc_excluded.is_empty() {
            let _ = writeln!(out, "AUC undefined for: {}", self.auc_excluded.join(", "));
        }
        let _ = writeln!(
            out,
            "\n{:<20} {:>7} {:>9} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6}",
            "label", "auc", "precision", "recall", "f1", "tp", "fp", "tn", "fn"
        );
        for l in &self.labels {
            let auc = l.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let (r, c) = (&l.rates, l.counts);
            let _ = writeln!(
                out,
                "{:<20} {auc:>7} {:>9.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>6} {:>6}",
                l.name, r.precision, r.recall, r.f1, c.tp, c.fp, c.tn, c.fn_
            );
        }
        for (name, r) in [("macro", &self.macro_rates), ("micro", &self.micro_rates)] {
            let _ = writeln!(
                out,
                "{name:<20} {:>7} {:>9.4} {:>7.4} {:>7.4}",
                "", r.precision, r.recall, r.f1
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
