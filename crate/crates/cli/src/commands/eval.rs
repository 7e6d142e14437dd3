use std::path::{Path, PathBuf};

use chestnet::dataset::{BINARY_CLASS_NAMES, LABEL_NAMES};
use chestnet::metrics::{roc_curve, RocCurve};
use chestnet::models::{Classifier, Task};
use chestnet::plot::roc_svg;
use chestnet::trainer::{evaluate_probs, load_checkpoint, predict_all};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_dir, labeled_set, read_records, write_file, IMAGES_DIR};
use crate::config::Overlay;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Args, Serialize, Deserialize, Default, Debug)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[serde(skip_deserializing)]
    pub checkpoint: PathBuf,
    /// Manifest CSV to score; images are read from `images/` beside it.
    #[serde(skip_deserializing)]
    pub manifest: PathBuf,
    /// Output directory for the metrics report.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Decision threshold [default: the threshold the model was trained with].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the ROC plot here, with the curve points as CSV beside it.
    #[arg(long, value_name = "SVG")]
    pub roc: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl Overlay for EvalArgs {
    fn overlay(self, file: Self) -> Self {
        EvalArgs {
            out: self.out.or(file.out),
            threshold: self.threshold.or(file.threshold),
            roc: self.roc.or(file.roc),
            batch_size: self.batch_size.or(file.batch_size),
            ..self
        }
    }
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// Curve points go to `<stem>.csv` for a single curve and to
/// `<stem>_<label>.csv` otherwise.
fn roc_csv_path(svg: &Path, label: &str, single: bool) -> PathBuf {
    let stem = svg.file_stem().and_then(|s| s.to_str()).unwrap_or("roc");
    let name = if single { format!("{stem}.csv") } else { format!("{stem}_{}.csv", slug(label)) };
    svg.with_file_name(name)
}

pub fn run(mut args: EvalArgs) -> CliResult<()> {
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    if !args.checkpoint.is_dir() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", args.checkpoint.display())));
    }
    let session = load_checkpoint(&args.checkpoint)?;
    let threshold = *args.threshold.get_or_insert(session.config.threshold);
    let batch = *args.batch_size.get_or_insert(session.config.batch_size);
    if batch == 0 {
        return Err(CliError::usage("--batch-size must be positive"));
    }
    let model = &session.model;
    let task = model.task();

    let mut run = RunManifest::start("eval", &args)?;
    run.input(&args.checkpoint.join("config.json"))?;
    let records = read_records(&args.manifest)?;
    run.input(&args.manifest)?;
    if records.is_empty() {
        return Err(CliError::missing(format!("{} lists no images", args.manifest.display())));
    }
    let images = args.manifest.parent().unwrap_or(Path::new(".")).join(IMAGES_DIR);
    let set = labeled_set(&records, &images, task)?;
    let expected = model.config().input_shape;
    if set.images().shape()[1..] != expected {
        return Err(CliError::usage(format!(
            "images are {:?} but the checkpoint expects {expected:?}",
            &set.images().shape()[1..]
        )));
    }

    let probs = predict_all(model, set.images(), batch)?;
    let report = evaluate_probs(task, &probs, set.targets(), threshold)?;
    create_dir(&out)?;
    write_file(&out.join("metrics.csv"), report.to_csv())?;
    write_file(&out.join("metrics.txt"), report.to_text())?;
    print!("{}", report.to_text());

    if let Some(svg) = &args.roc {
        let n = set.len();
        let column = |t: &chestnet::Tensor, j: usize, width: usize| -> Vec<f64> {
            (0..n).map(|i| t.data()[i * width + j]).collect()
        };
        let labelled: Vec<(&str, usize)> = match task {
            Task::Binary => vec![(BINARY_CLASS_NAMES[1], 1)],
            Task::Multilabel => LABEL_NAMES.iter().copied().zip(0..).collect(),
        };
        let width = task.output_dim();
        let mut curves: Vec<(&str, RocCurve)> = Vec::new();
        for (name, j) in labelled {
            let truth: Vec<bool> = column(set.targets(), j, width).iter().map(|&y| y > 0.5).collect();
            // labels without both classes have no curve; the report flags them
            if let Ok(curve) = roc_curve(&column(&probs, j, width), &truth) {
                curves.push((name, curve));
            }
        }
        if let Some(parent) = svg.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        let single = curves.len() == 1;
        for (name, curve) in &curves {
            write_file(&roc_csv_path(svg, name, single), curve.to_csv())?;
        }
        let refs: Vec<(&str, &RocCurve)> = curves.iter().map(|(n, c)| (*n, c)).collect();
        write_file(svg, roc_svg(&format!("ROC: {task}"), &refs))?;
    }
    run.finish(&out)
}
