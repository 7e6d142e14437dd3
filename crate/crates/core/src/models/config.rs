use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{ActivationKind, ConvSpec};
use crate::dataset::NUM_LABELS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// No Finding vs. Disease Present, two-way softmax head.
    Binary,
    /// One independent sigmoid per disease label.
    Multilabel,
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multilabel => NUM_LABELS,
        }
    }

    pub fn output_activation(self) -> ActivationKind {
        match self {
            Task::Binary => ActivationKind::Softmax,
            Task::Multilabel => ActivationKind::Sigmoid,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multilabel" => Ok(Task::Multilabel),
            other => Err(Error::invalid(format!("unknown task `{other}` (expected binary or multilabel)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multilabel => "multilabel",
        })
    }
}

/// conv → (batchnorm) → relu → (maxpool).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: ConvSpec,
    pub pool: Option<usize>,
    pub batchnorm: bool,
}

impl ConvBlock {
    /// `filters` 3×3 same-padded filters followed by a 2×2 max pool.
    pub fn pooled(filters: usize) -> Self {
        ConvBlock {
            conv: ConvSpec::same(filters, 3),
            pool: Some(2),
            batchnorm: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    /// Output channels of a basic block; inner width of a bottleneck block
    /// (which outputs four times as many).
    pub filters: usize,
    pub blocks: usize,
    /// Applied by the first block of the stage.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    pub stem: Option<ConvBlock>,
    pub stages: Vec<StageSpec>,
    pub bottleneck: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    /// `(C, H, W)` of one input image.
    pub input_shape: [usize; 3],
    pub conv_blocks: Vec<ConvBlock>,
    pub dense_widths: Vec<usize>,
    pub output_dim: usize,
    /// When set, `conv_blocks` must be empty and the body is residual.
    pub residual: Option<ResidualConfig>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    Baseline,
    Optimized,
    Multilabel,
    ResnetTiny,
    Resnet50,
}

impl FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelPreset::Baseline),
            "optimized" => Ok(ModelPreset::Optimized),
            "multilabel" => Ok(ModelPreset::Multilabel),
            "resnet-tiny" => Ok(ModelPreset::ResnetTiny),
            "resnet50" => Ok(ModelPreset::Resnet50),
            other => Err(Error::invalid(format!(
                "unknown model `{other}` (expected baseline, optimized, multilabel, resnet-tiny or resnet50)"
            ))),
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelPreset::Baseline => "baseline",
            ModelPreset::Optimized => "optimized",
            ModelPreset::Multilabel => "multilabel",
            ModelPreset::ResnetTiny => "resnet-tiny",
            ModelPreset::Resnet50 => "resnet50",
        })
    }
}

impl ModelConfig {
    /// Three pooled 32-filter conv blocks, a 128-unit dense layer and a
    /// two-way softmax.
    pub fn baseline(input_shape: [usize; 3], seed: u64) -> Self {
        ModelConfig {
            task: Task::Binary,
            input_shape,
            conv_blocks: vec![ConvBlock::pooled(32); 3],
            dense_widths: vec![128],
            output_dim: 2,
            residual: None,
            seed,
        }
    }

    pub fn optimized(input_shape: [usize; 3], seed: u64) -> Self {
        ModelConfig {
            conv_blocks: [32, 32, 64, 64].map(ConvBlock::pooled).to_vec(),
            dense_widths: vec![256],
            ..Self::baseline(input_shape, seed)
        }
    }

    pub fn multilabel(input_shape: [usize; 3], seed: u64) -> Self {
        ModelConfig {
            task: Task::Multilabel,
            input_shape,
            conv_blocks: [32, 32, 64, 64].map(ConvBlock::pooled).to_vec(),
            dense_widths: vec![256, 128],
            output_dim: NUM_LABELS,
            residual: None,
            seed,
        }
    }

    /// Two stages of one basic block each.
    pub fn resnet_tiny(task: Task, input_shape: [usize; 3], seed: u64) -> Self {
        ModelConfig {
            task,
            input_shape,
            conv_blocks: vec![],
            dense_widths: vec![],
            output_dim: task.output_dim(),
            residual: Some(ResidualConfig {
                stem: Some(ConvBlock {
                    conv: ConvSpec::same(16, 3),
                    pool: None,
                    batchnorm: true,
                }),
                stages: vec![
                    StageSpec { filters: 16, blocks: 1, stride: 1 },
                    StageSpec { filters: 32, blocks: 1, stride: 2 },
                ],
                bottleneck: false,
            }),
            seed,
        }
    }

    /// Bottleneck stages of 3, 4, 6 and 3 blocks behind a strided 7×7 stem.
    pub fn resnet50(task: Task, input_shape: [usize; 3], seed: u64) -> Self {
        let stages = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]
            .map(|(filters, blocks, stride)| StageSpec { filters, blocks, stride })
            .to_vec();
        ModelConfig {
            residual: Some(ResidualConfig {
                stem: Some(ConvBlock {
                    conv: ConvSpec { filters: 64, kernel_size: 7, stride: 2, padding: 3 },
                    pool: Some(2),
                    batchnorm: true,
                }),
                stages,
                bottleneck: true,
            }),
            ..Self::resnet_tiny(task, input_shape, seed)
        }
    }

    /// Named preset for `task`; rejects presets whose head does not fit.
    pub fn preset(preset: ModelPreset, task: Task, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let conflict = |head: &str| {
            Error::invalid(format!(
                "model `{preset}` has a {head} head and cannot serve the {task} task"
            ))
        };
        match (preset, task) {
            (ModelPreset::Baseline, Task::Binary) => Ok(Self::baseline(input_shape, seed)),
            (ModelPreset::Optimized, Task::Binary) => Ok(Self::optimized(input_shape, seed)),
            (ModelPreset::Baseline | ModelPreset::Optimized, _) => Err(conflict("two-way softmax")),
            (ModelPreset::Multilabel, Task::Multilabel) => Ok(Self::multilabel(input_shape, seed)),
            (ModelPreset::Multilabel, _) => Err(conflict("14-way sigmoid")),
            (ModelPreset::ResnetTiny, _) => Ok(Self::resnet_tiny(task, input_shape, seed)),
            (ModelPreset::Resnet50, _) => Ok(Self::resnet50(task, input_shape, seed)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != self.task.output_dim() {
            return Err(Error::invalid(format!(
                "output dimension {} does not match the {} task (expects {})",
                self.output_dim,
                self.task,
                self.task.output_dim()
            )));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::invalid(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        let blocks = self.conv_blocks.iter().chain(self.residual.iter().flat_map(|r| r.stem.iter()));
        for b in blocks {
            b.conv.validate()?;
            if b.pool == Some(0) {
                return Err(Error::invalid("pooling window must be positive"));
            }
        }
        if let Some(r) = &self.residual {
            if !self.conv_blocks.is_empty() {
                return Err(Error::invalid("residual models take their convolutions from stages, not conv blocks"));
            }
            if r.stages.is_empty() || r.stages.iter().any(|s| s.filters == 0 || s.blocks == 0 || s.stride == 0) {
                return Err(Error::invalid("residual stages need positive filters, blocks and stride"));
            }
        }
        Ok(())
    }
}
