//! Convolutional and residual classifiers built on the autograd tape.

mod config;

pub use config::{ConvBlock, ModelConfig, ModelPreset, ResidualConfig, StageSpec, Task};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ActivationKind, ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running batchnorm statistics.
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Anything that maps an image batch `[B, C, H, W]` to class probabilities
/// `[B, output_dim]`.
pub trait Classifier {
    fn task(&self) -> Task;
    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm normalises with batch statistics.
    Train,
    /// Batchnorm uses the running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv { spec: ConvSpec, weight: usize, bias: Option<usize> },
    /// `stats` indexes the running mean; the running variance follows it.
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    Relu,
    MaxPool(usize),
    GlobalAvgPool,
    Flatten,
    Dense { weight: usize, bias: usize },
    Activation(ActivationKind),
    /// `relu(branch(x) + shortcut(x))`; an empty shortcut is the identity.
    Residual { branch: Vec<Layer>, shortcut: Vec<Layer> },
}

/// Batch statistics seen by one batchnorm layer in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub slot: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct ForwardPass {
    pub output: Var,
    /// One tape leaf per model parameter, in parameter order.
    pub params: Vec<Var>,
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
    param_names: Vec<String>,
    buffers: Vec<Tensor>,
    buffer_names: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Extent {
    Spatial(usize, usize, usize),
    Flat(usize),
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Tensor>,
    param_names: Vec<String>,
    buffers: Vec<Tensor>,
    buffer_names: Vec<String>,
    /// Top-level layer index, for error messages.
    layer: usize,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: vec![],
            param_names: vec![],
            buffers: vec![],
            buffer_names: vec![],
            layer: 0,
        }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Layer { layer: self.layer, reason: reason.into() }
    }

    fn param(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(value);
        self.param_names.push(name);
        self.params.len() - 1
    }

    /// He-normal weights: `N(0, 2 / fan_in)`.
    fn he(&mut self, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
        Tensor::rand_normal(shape, (2.0 / fan_in as f64).sqrt(), &mut self.rng)
    }

    fn spatial(&self, e: Extent) -> Result<(usize, usize, usize)> {
        match e {
            Extent::Spatial(c, h, w) => Ok((c, h, w)),
            Extent::Flat(_) => Err(self.fail("expects a feature map, got a flat vector")),
        }
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool, e: Extent) -> Result<(Layer, Extent)> {
        let (c, h, w) = self.spatial(e)?;
        let extent = |n: usize| spec.output_extent(n).ok().filter(|&o| o >= 1);
        let (Some(oh), Some(ow)) = (extent(h), extent(w)) else {
            return Err(self.fail(format!(
                "feature map {h}x{w} collapses under a {k}x{k} convolution with stride {s} and padding {p}",
                k = spec.kernel_size,
                s = spec.stride,
                p = spec.padding
            )));
        };
        let k = spec.kernel_size;
        let w_init = self.he(vec![spec.filters, c, k, k], c * k * k)?;
        let weight = self.param(format!("{name}.weight"), w_init);
        let bias = if bias {
            Some(self.param(format!("{name}.bias"), Tensor::zeros(vec![spec.filters])?))
        } else {
            None
        };
        Ok((Layer::Conv { spec, weight, bias }, Extent::Spatial(spec.filters, oh, ow)))
    }

    fn batchnorm(&mut self, name: &str, e: Extent) -> Result<Layer> {
        let (c, _, _) = self.spatial(e)?;
        let gamma = self.param(format!("{name}.gamma"), Tensor::ones(vec![c])?);
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(vec![c])?);
        self.buffers.push(Tensor::zeros(vec![c])?);
        self.buffer_names.push(format!("{name}.running_mean"));
        self.buffers.push(Tensor::ones(vec![c])?);
        self.buffer_names.push(format!("{name}.running_var"));
        Ok(Layer::BatchNorm { gamma, beta, stats: self.buffers.len() - 2 })
    }

    fn pool(&self, window: usize, e: Extent) -> Result<(Layer, Extent)> {
        let (c, h, w) = self.spatial(e)?;
        if h % window != 0 || w % window != 0 || h < window || w < window {
            return Err(self.fail(format!("feature map {h}x{w} cannot be max-pooled by a {window}x{window} window")));
        }
        Ok((Layer::MaxPool(window), Extent::Spatial(c, h / window, w / window)))
    }

    fn dense(&mut self, name: &str, out: usize, e: Extent) -> Result<(Layer, Extent)> {
        let Extent::Flat(d) = e else {
            return Err(self.fail("dense layer expects a flat vector"));
        };
        let w_init = self.he(vec![d, out], d)?;
        let weight = self.param(format!("{name}.weight"), w_init);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(vec![out])?);
        Ok((Layer::Dense { weight, bias }, Extent::Flat(out)))
    }

    fn conv_block(&mut self, name: &str, block: &ConvBlock, bias: bool, e: Extent, out: &mut Vec<Layer>) -> Result<Extent> {
        let (conv, mut e) = self.conv(&format!("{name}.conv"), block.conv, bias, e)?;
        out.push(conv);
        if block.batchnorm {
            out.push(self.batchnorm(&format!("{name}.bn"), e)?);
        }
        out.push(Layer::Relu);
        if let Some(window) = block.pool {
            let (pool, next) = self.pool(window, e)?;
            out.push(pool);
            e = next;
        }
        Ok(e)
    }

    fn residual_block(&mut self, name: &str, filters: usize, stride: usize, bottleneck: bool, e: Extent) -> Result<(Layer, Extent)> {
        let (c_in, _, _) = self.spatial(e)?;
        let mut branch = Vec::new();
        let specs: Vec<ConvSpec> = if bottleneck {
            vec![
                ConvSpec { filters, kernel_size: 1, stride: 1, padding: 0 },
                ConvSpec { filters, kernel_size: 3, stride, padding: 1 },
                ConvSpec { filters: 4 * filters, kernel_size: 1, stride: 1, padding: 0 },
            ]
        } else {
            vec![
                ConvSpec { filters, kernel_size: 3, stride, padding: 1 },
                ConvSpec { filters, kernel_size: 3, stride: 1, padding: 1 },
            ]
        };
        let last = specs.len() - 1;
        let mut b = e;
        for (i, spec) in specs.into_iter().enumerate() {
            let (conv, next) = self.conv(&format!("{name}.conv{i}"), spec, false, b)?;
            branch.push(conv);
            branch.push(self.batchnorm(&format!("{name}.bn{i}"), next)?);
            if i != last {
                branch.push(Layer::Relu);
            }
            b = next;
        }
        let (c_out, _, _) = self.spatial(b)?;
        let mut shortcut = Vec::new();
        if c_out != c_in || stride != 1 {
            let spec = ConvSpec { filters: c_out, kernel_size: 1, stride, padding: 0 };
            let (conv, s) = self.conv(&format!("{name}.shortcut.conv"), spec, false, e)?;
            if s != b {
                return Err(self.fail(format!("shortcut extent {s:?} does not match branch extent {b:?}")));
            }
            shortcut.push(conv);
            shortcut.push(self.batchnorm(&format!("{name}.shortcut.bn"), s)?);
        }
        Ok((Layer::Residual { branch, shortcut }, b))
    }

    fn head(&mut self, config: &ModelConfig, mut e: Extent, layers: &mut Vec<Layer>) -> Result<()> {
        for (i, &width) in config.dense_widths.iter().enumerate() {
            self.layer = layers.len();
            let (dense, next) = self.dense(&format!("dense{i}"), width, e)?;
            layers.push(dense);
            layers.push(Layer::Relu);
            e = next;
        }
        self.layer = layers.len();
        let (dense, _) = self.dense("output", config.output_dim, e)?;
        layers.push(dense);
        layers.push(Layer::Activation(config.task.output_activation()));
        Ok(())
    }

    fn finish(self, config: ModelConfig, layers: Vec<Layer>) -> Model {
        Model {
            config,
            layers,
            params: self.params,
            param_names: self.param_names,
            buffers: self.buffers,
            buffer_names: self.buffer_names,
        }
    }
}

fn input_extent(config: &ModelConfig) -> Extent {
    let [c, h, w] = config.input_shape;
    Extent::Spatial(c, h, w)
}

fn build_plain(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut b = Builder::new(config.seed);
    let mut layers = Vec::new();
    let mut e = input_extent(config);
    for (i, block) in config.conv_blocks.iter().enumerate() {
        b.layer = layers.len();
        e = b.conv_block(&format!("block{i}"), block, !block.batchnorm, e, &mut layers)?;
    }
    let (c, h, w) = b.spatial(e)?;
    layers.push(Layer::Flatten);
    b.head(config, Extent::Flat(c * h * w), &mut layers)?;
    Ok(b.finish(config.clone(), layers))
}

/// Plain convolutional classifier with a two-way softmax head.
pub fn build_binary_cnn(config: &ModelConfig) -> Result<Model> {
    if config.task != Task::Binary || config.residual.is_some() {
        return Err(Error::invalid("build_binary_cnn needs a non-residual binary config"));
    }
    build_plain(config)
}

/// Plain convolutional classifier with independent sigmoid outputs.
pub fn build_multilabel_cnn(config: &ModelConfig) -> Result<Model> {
    if config.task != Task::Multilabel || config.residual.is_some() {
        return Err(Error::invalid("build_multilabel_cnn needs a non-residual multilabel config"));
    }
    build_plain(config)
}

/// Residual network: optional stem, stages of residual blocks, global
/// average pooling and the task head.
pub fn build_resnet(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let Some(residual) = &config.residual else {
        return Err(Error::invalid("build_resnet needs a residual config"));
    };
    let mut b = Builder::new(config.seed);
    let mut layers = Vec::new();
    let mut e = input_extent(config);
    if let Some(stem) = &residual.stem {
        e = b.conv_block("stem", stem, false, e, &mut layers)?;
    }
    for (s, stage) in residual.stages.iter().enumerate() {
        for i in 0..stage.blocks {
            b.layer = layers.len();
            let stride = if i == 0 { stage.stride } else { 1 };
            let (block, next) =
                b.residual_block(&format!("stage{s}.block{i}"), stage.filters, stride, residual.bottleneck, e)?;
            layers.push(block);
            e = next;
        }
    }
    let (c, _, _) = b.spatial(e)?;
    layers.push(Layer::GlobalAvgPool);
    b.head(config, Extent::Flat(c), &mut layers)?;
    Ok(b.finish(config.clone(), layers))
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Model> {
        match (&config.residual, config.task) {
            (Some(_), _) => build_resnet(config),
            (None, Task::Binary) => build_binary_cnn(config),
            (None, Task::Multilabel) => build_multilabel_cnn(config),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Running batchnorm statistics.
    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Number of top-level layers, as used by [`Model::forward_prefix`].
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Replaces parameters and buffers, which must match the current shapes.
    pub fn load_state(&mut self, params: Vec<Tensor>, buffers: Vec<Tensor>) -> Result<()> {
        for (kind, new, old) in [("parameter", &params, &self.params), ("buffer", &buffers, &self.buffers)] {
            if new.len() != old.len() {
                return Err(Error::invalid(format!("expected {} {kind}s, got {}", old.len(), new.len())));
            }
            for (i, (n, o)) in new.iter().zip(old.iter()).enumerate() {
                if n.shape() != o.shape() {
                    return Err(Error::invalid(format!(
                        "{kind} {i} has shape {:?}, expected {:?}",
                        n.shape(),
                        o.shape()
                    )));
                }
            }
        }
        self.params = params;
        self.buffers = buffers;
        Ok(())
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        let m = BATCHNORM_MOMENTUM;
        for s in stats {
            for (slot, batch) in [(s.slot, &s.mean), (s.slot + 1, &s.var)] {
                for (r, b) in self.buffers[slot].data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = self.config.input_shape;
        match shape {
            [_, bc, bh, bw] if [*bc, *bh, *bw] == [c, h, w] => Ok(()),
            s => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("model expects input [B, {c}, {h}, {w}]"),
            }),
        }
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
        self.forward_prefix(tape, batch, mode, self.layers.len())
    }

    /// Runs only the first `depth` top-level layers.
    pub fn forward_prefix(&self, tape: &mut Tape, batch: &Tensor, mode: Mode, depth: usize) -> Result<ForwardPass> {
        self.check_input(batch.shape())?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let input = tape.constant(batch.clone());
        let (output, batch_stats) = self.run_layers(tape, input, &params, mode, depth)?;
        Ok(ForwardPass { output, params, batch_stats })
    }

    /// Forward pass over caller-provided tape nodes: `params` stands in for
    /// the model's parameters, in parameter order.
    pub fn forward_vars(&self, tape: &mut Tape, input: Var, params: &[Var], mode: Mode) -> Result<(Var, Vec<BatchStats>)> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!("expected {} parameter nodes, got {}", self.params.len(), params.len())));
        }
        self.check_input(tape.shape(input))?;
        self.run_layers(tape, input, params, mode, self.layers.len())
    }

    fn run_layers(&self, tape: &mut Tape, input: Var, params: &[Var], mode: Mode, depth: usize) -> Result<(Var, Vec<BatchStats>)> {
        let mut stats = Vec::new();
        let mut x = input;
        for layer in &self.layers[..depth.min(self.layers.len())] {
            x = self.run(tape, layer, x, params, mode, &mut stats)?;
        }
        Ok((x, stats))
    }

    fn run(
        &self,
        tape: &mut Tape,
        layer: &Layer,
        x: Var,
        p: &[Var],
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        match layer {
            Layer::Conv { spec, weight, bias } => {
                let bias = match bias {
                    Some(b) => p[*b],
                    None => tape.constant(Tensor::zeros(vec![spec.filters])?),
                };
                tape.conv2d(x, p[*weight], bias, *spec)
            }
            Layer::BatchNorm { gamma, beta, stats: slot } => match mode {
                Mode::Train => {
                    let out = tape.batchnorm2d(x, p[*gamma], p[*beta], BATCHNORM_EPS)?;
                    stats.push(BatchStats { slot: *slot, mean: out.mean, var: out.var });
                    Ok(out.output)
                }
                Mode::Eval => tape.batchnorm2d_inference(
                    x,
                    p[*gamma],
                    p[*beta],
                    self.buffers[*slot].data(),
                    self.buffers[slot + 1].data(),
                    BATCHNORM_EPS,
                ),
            },
            Layer::Relu => Ok(tape.relu(x)),
            Layer::MaxPool(window) => tape.maxpool2d(x, *window),
            Layer::GlobalAvgPool => tape.global_avg_pool(x),
            Layer::Flatten => tape.flatten(x),
            Layer::Dense { weight, bias } => tape.affine(x, p[*weight], p[*bias]),
            Layer::Activation(kind) => tape.activation(*kind, x),
            Layer::Residual { branch, shortcut } => {
                let mut y = x;
                for l in branch {
                    y = self.run(tape, l, y, p, mode, stats)?;
                }
                let mut s = x;
                for l in shortcut {
                    s = self.run(tape, l, s, p, mode, stats)?;
                }
                let sum = tape.add(y, s)?;
                Ok(tape.relu(sum))
            }
        }
    }
}

impl Classifier for Model {
    fn task(&self) -> Task {
        self.config.task
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, batch, Mode::Eval)?;
        Ok(tape.value(pass.output).clone())
    }
}
