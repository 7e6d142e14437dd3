//! Adam training loop, evaluation and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::dataset::{derive_binary_label, SampleRecord, BINARY_CLASS_NAMES, LABEL_NAMES};
use crate::error::{Error, Result};
use crate::losses::{self, compute_named_class_weights, ClassWeights, LossKind};
use crate::metrics::{classification_report, MetricsReport, DEFAULT_THRESHOLD};
use crate::models::{Classifier, Mode, Model, Task};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `None` picks the loss matching the model's task.
    pub loss: Option<LossKind>,
    pub use_class_weights: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            loss: None,
            use_class_weights: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("Adam eps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !unit(self.threshold) {
            return Err(Error::invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    /// The configured loss, checked against the task's output head.
    pub fn loss_for(&self, task: Task) -> Result<LossKind> {
        let natural = match task {
            Task::Binary => LossKind::WeightedCrossEntropy,
            Task::Multilabel => LossKind::WeightedBce,
        };
        match self.loss {
            None => Ok(natural),
            Some(kind) if kind == natural => Ok(kind),
            Some(kind) => Err(Error::invalid(format!("loss {kind:?} does not fit the {task} task's output head"))),
        }
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam_step got {} parameters, {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        p.expect_same_shape(g, "adam_step")?;
        p.expect_same_shape(m, "adam_step")?;
        p.expect_same_shape(v, "adam_step")?;
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= config.learning_rate * (mj / c1) / ((vj / c2).sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Images `[N, C, H, W]` with targets `[N, D]`: one-hot rows for the binary
/// task, multi-hot rows for the multilabel task.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    images: Tensor,
    targets: Tensor,
}

impl LabeledSet {
    pub fn new(images: Tensor, targets: Tensor) -> Result<Self> {
        images.expect_rank(4, "labeled set images")?;
        targets.expect_rank(2, "labeled set targets")?;
        if images.shape()[0] != targets.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "labeled set",
                lhs: images.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        images.check_finite()?;
        if targets.data().iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::invalid("targets must be 0 or 1"));
        }
        Ok(LabeledSet { images, targets })
    }

    /// Loads every record's image with `load` (each `[C, H, W]`) and builds
    /// targets for `task`.
    pub fn from_records(
        records: &[SampleRecord],
        task: Task,
        mut load: impl FnMut(&SampleRecord) -> Result<Tensor>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("cannot build a labeled set from zero records"));
        }
        let images: Vec<Tensor> = records.iter().map(&mut load).collect::<Result<_>>()?;
        let rows: Vec<f64> = records
            .iter()
            .flat_map(|r| match task {
                Task::Binary => {
                    let d = derive_binary_label(&r.labels) as f64;
                    vec![1.0 - d, d]
                }
                Task::Multilabel => r.labels.as_f64().to_vec(),
            })
            .collect();
        let targets = Tensor::new(vec![records.len(), task.output_dim()], rows)?;
        LabeledSet::new(Tensor::stack(&images.iter().collect::<Vec<_>>())?, targets)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    /// Rows `indices` of images and targets.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((gather(&self.images, indices)?, gather(&self.targets, indices)?))
    }

    /// Positive count per target column.
    pub fn column_counts(&self) -> Vec<usize> {
        let d = self.targets.shape()[1];
        let mut counts = vec![0; d];
        for row in self.targets.data().chunks(d) {
            for (c, &t) in counts.iter_mut().zip(row) {
                *c += (t == 1.0) as usize;
            }
        }
        counts
    }
}

fn gather(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

fn class_names(task: Task) -> Vec<String> {
    match task {
        Task::Binary => BINARY_CLASS_NAMES.map(String::from).to_vec(),
        Task::Multilabel => LABEL_NAMES.map(String::from).to_vec(),
    }
}

/// Inverse-frequency weights counted over `set` alone.
pub fn class_weights_for(set: &LabeledSet, task: Task) -> Result<ClassWeights> {
    compute_named_class_weights(class_names(task), &set.column_counts(), set.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// `None` when no validation label has both classes.
    pub val_mean_auc: Option<f64>,
}

/// Per-epoch records. Wall-clock times are kept alongside but stay out of
/// equality, the CSV and checkpoints, so identical runs compare equal and
/// write identical files.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
    }
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,val_mean_auc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt(e.val_loss),
                opt(e.val_accuracy),
                opt(e.val_mean_auc)
            );
        }
        out
    }
}

/// Model, optimiser state and history of a (possibly resumed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub history: TrainHistory,
}

impl Session {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.loss_for(model.config().task)?;
        let adam = AdamState::new(model.params());
        Ok(Session { model, adam, config, epochs_completed: 0, history: TrainHistory::default() })
    }

    fn weights(&self, train: &LabeledSet) -> Result<ClassWeights> {
        let task = self.model.config().task;
        if self.config.use_class_weights {
            class_weights_for(train, task)
        } else {
            ClassWeights::new(class_names(task), vec![1.0; task.output_dim()])
        }
    }

    /// Trains until `config.epochs` epochs have been completed in total.
    pub fn run(&mut self, train: &LabeledSet, val: Option<&LabeledSet>) -> Result<()> {
        self.run_epochs(train, val, self.config.epochs.saturating_sub(self.epochs_completed))
    }

    /// Trains `epochs` more epochs. The shuffle of epoch `e` depends only
    /// on the seed and `e`, so a resumed session follows the same trajectory
    /// as an uninterrupted one.
    pub fn run_epochs(&mut self, train: &LabeledSet, val: Option<&LabeledSet>, epochs: usize) -> Result<()> {
        if epochs == 0 {
            return Ok(());
        }
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let task = self.model.config().task;
        let kind = self.config.loss_for(task)?;
        let weights = self.weights(train)?;
        for _ in 0..epochs {
            let start = Instant::now();
            let epoch = self.epochs_completed;
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64 + 1);
            order.shuffle(&mut rng);

            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                total += self.step(train, chunk, kind, &weights)? * chunk.len() as f64;
            }
            let mut record = EpochRecord {
                epoch: epoch + 1,
                train_loss: total / train.len() as f64,
                val_loss: None,
                val_accuracy: None,
                val_mean_auc: None,
            };
            if let Some(val) = val.filter(|v| !v.is_empty()) {
                let probs = predict_all(&self.model, val.images(), self.config.batch_size)?;
                record.val_loss = Some(losses::loss_value(kind, &probs, val.targets(), &weights)?);
                let report = report_for(task, &probs, val.targets(), self.config.threshold)?;
                record.val_accuracy = Some(report.accuracy);
                record.val_mean_auc = report.mean_auc;
            }
            self.epochs_completed += 1;
            self.history.epochs.push(record);
            self.history.wall_seconds.push(start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn step(&mut self, train: &LabeledSet, indices: &[usize], kind: LossKind, weights: &ClassWeights) -> Result<f64> {
        let (images, targets) = train.batch(indices)?;
        let mut tape = Tape::new();
        let pass = self.model.forward(&mut tape, &images, Mode::Train)?;
        let loss = losses::record(&mut tape, kind, pass.output, &targets, weights)?;
        let value = tape.value(loss).item().unwrap_or(f64::NAN);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = pass
            .params
            .iter()
            .map(|&v| grads.take(v).ok_or_else(|| Error::invalid("parameter missing from gradients")))
            .collect::<Result<_>>()?;
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &self.config)?;
        self.model.update_running_stats(&pass.batch_stats);
        Ok(value)
    }
}

/// Trains a fresh session for `config.epochs` epochs.
pub fn train(model: Model, train: &LabeledSet, val: Option<&LabeledSet>, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut session = Session::new(model, config.clone())?;
    session.run(train, val)?;
    Ok((session.model, session.history))
}

/// Probabilities for every image, computed `batch_size` images at a time.
pub fn predict_all(model: &dyn Classifier, images: &Tensor, batch_size: usize) -> Result<Tensor> {
    let n = images.shape()[0];
    let indices: Vec<usize> = (0..n).collect();
    let mut rows = Vec::new();
    let mut width = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let p = model.predict_proba(&gather(images, chunk)?)?;
        width = p.shape()[1];
        rows.extend_from_slice(p.data());
    }
    Tensor::new(vec![n, width], rows)
}

/// Binary reports score the Disease Present column; multilabel reports
/// cover every label.
fn report_for(task: Task, probs: &Tensor, targets: &Tensor, threshold: f64) -> Result<MetricsReport> {
    match task {
        Task::Binary => {
            let column = |t: &Tensor| -> Result<Tensor> {
                let n = t.shape()[0];
                Tensor::new(vec![n, 1], (0..n).map(|i| t.data()[2 * i + 1]).collect())
            };
            classification_report(&column(probs)?, &column(targets)?, threshold)?
                .with_label_names(&[BINARY_CLASS_NAMES[1]])
        }
        Task::Multilabel => classification_report(probs, targets, threshold)?.with_label_names(&LABEL_NAMES),
    }
}

/// Inference-mode metrics for `model` on `set`. Fails with the ROC error
/// when no label has both classes present.
pub fn evaluate(model: &dyn Classifier, set: &LabeledSet, threshold: f64) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let probs = predict_all(model, set.images(), 64)?;
    evaluate_probs(model.task(), &probs, set.targets(), threshold)
}

/// Same as [`evaluate`] for already computed probabilities.
pub fn evaluate_probs(task: Task, probs: &Tensor, targets: &Tensor, threshold: f64) -> Result<MetricsReport> {
    let report = report_for(task, probs, targets, threshold)?;
    if report.mean_auc.is_none() {
        return Err(Error::RocUndefined);
    }
    Ok(report)
}
