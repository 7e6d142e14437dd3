use std::path::PathBuf;

use chestnet::losses::LossKind;
use chestnet::models::{Model, ModelConfig, ModelPreset, Task};
use chestnet::trainer::{save_checkpoint, Session, TrainConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_dir, labeled_set, read_records, write_file, IMAGES_DIR};
use crate::config::Overlay;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Args, Serialize, Deserialize, Default, Debug)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// Directory written by `ingest` (train.csv, val.csv, images/).
    #[serde(skip_deserializing)]
    pub manifest_dir: PathBuf,
    /// Output directory for the checkpoint and history.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// binary or multilabel [default: binary].
    #[arg(long)]
    pub task: Option<String>,
    /// baseline, optimized, multilabel, resnet-tiny or resnet50
    /// [default: baseline for binary, multilabel for multilabel].
    #[arg(long)]
    pub model: Option<String>,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub weighted: bool,
    /// weighted-ce or weighted-bce [default: by task].
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decision threshold for validation metrics.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl Overlay for TrainArgs {
    fn overlay(self, file: Self) -> Self {
        TrainArgs {
            out: self.out.or(file.out),
            task: self.task.or(file.task),
            model: self.model.or(file.model),
            weighted: self.weighted || file.weighted,
            loss: self.loss.or(file.loss),
            epochs: self.epochs.or(file.epochs),
            seed: self.seed.or(file.seed),
            batch_size: self.batch_size.or(file.batch_size),
            lr: self.lr.or(file.lr),
            threshold: self.threshold.or(file.threshold),
            ..self
        }
    }
}

pub fn run(mut args: TrainArgs) -> CliResult<()> {
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    let task: Task = args.task.get_or_insert_with(|| "binary".into()).parse()?;
    let default_model = match task {
        Task::Binary => ModelPreset::Baseline,
        Task::Multilabel => ModelPreset::Multilabel,
    };
    let preset: ModelPreset = args.model.get_or_insert_with(|| default_model.to_string()).parse()?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: *args.lr.get_or_insert(defaults.learning_rate),
        batch_size: *args.batch_size.get_or_insert(defaults.batch_size),
        epochs: *args.epochs.get_or_insert(defaults.epochs),
        seed: *args.seed.get_or_insert(defaults.seed),
        threshold: *args.threshold.get_or_insert(defaults.threshold),
        loss: args.loss.as_deref().map(str::parse::<LossKind>).transpose()?,
        use_class_weights: args.weighted,
        ..defaults
    };
    config.validate()?;
    config.loss_for(task)?;

    let dir = &args.manifest_dir;
    let images = dir.join(IMAGES_DIR);
    let train_csv = dir.join("train.csv");
    let val_csv = dir.join("val.csv");
    let mut run = RunManifest::start("train", &args)?;
    run.seed("model", config.seed);
    run.seed("shuffle", config.seed);

    let train_records = read_records(&train_csv)?;
    run.input(&train_csv)?;
    if train_records.is_empty() {
        return Err(CliError::missing(format!("{} lists no images", train_csv.display())));
    }
    let train_set = labeled_set(&train_records, &images, task)?;
    let val_set = if val_csv.is_file() {
        run.input(&val_csv)?;
        let records = read_records(&val_csv)?;
        if records.is_empty() {
            None
        } else {
            Some(labeled_set(&records, &images, task)?)
        }
    } else {
        None
    };

    let s = train_set.images().shape();
    let model_config = ModelConfig::preset(preset, task, [s[1], s[2], s[3]], config.seed)?;
    let mut session = Session::new(Model::build(&model_config)?, config)?;
    session.run(&train_set, val_set.as_ref())?;

    create_dir(&out)?;
    save_checkpoint(&session, &out.join("checkpoint"))?;
    write_file(&out.join("history.csv"), session.history.to_csv())?;
    if let Some(last) = session.history.epochs.last() {
        println!("epoch {}: train loss {:.6}", last.epoch, last.train_loss);
    }
    run.finish(&out)
}
