use std::path::{Path, PathBuf};

use chestnet::dataset::{
    locate_image, load_image, patient_split, resize_image, subsample, summarize_demographics, write_manifest_csv,
    write_npy, DatasetManifest, Dtype, SplitSpec, DEFAULT_IMAGE_SIZE,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_dir, read_records, write_file, IMAGES_DIR, SPLITS};
use crate::config::Overlay;
use crate::error::{with_path, CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Args, Serialize, Deserialize, Default, Debug)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct IngestArgs {
    /// Metadata CSV, wide (one row per image) or long (one row per label).
    #[serde(skip_deserializing)]
    pub metadata: PathBuf,
    /// Directory holding the source images (.pgm or .npy).
    #[serde(skip_deserializing)]
    pub image_dir: PathBuf,
    /// Output directory for manifests, images and reports.
    #[serde(skip_deserializing)]
    pub out_dir: PathBuf,
    /// Keep a seeded uniform subsample of N images.
    #[arg(long, value_name = "N")]
    pub subset: Option<usize>,
    /// Seed for the subsample and the patient split [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side length images are resized to [default: 256].
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
    /// Fraction of patients in the training split [default: 0.7].
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of patients in the validation split [default: 0.15].
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Fraction of patients in the test split [default: 0.15].
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

impl Overlay for IngestArgs {
    fn overlay(self, file: Self) -> Self {
        IngestArgs {
            subset: self.subset.or(file.subset),
            seed: self.seed.or(file.seed),
            size: self.size.or(file.size),
            train_fraction: self.train_fraction.or(file.train_fraction),
            val_fraction: self.val_fraction.or(file.val_fraction),
            test_fraction: self.test_fraction.or(file.test_fraction),
            ..self
        }
    }
}

/// Where ingest stores the array for `image_id`.
pub fn stored_image_path(images_dir: &Path, image_id: &str) -> PathBuf {
    images_dir.join(image_id).with_extension("npy")
}

pub fn run(mut args: IngestArgs) -> CliResult<()> {
    let defaults = SplitSpec::default();
    let seed = *args.seed.get_or_insert(0);
    let size = *args.size.get_or_insert(DEFAULT_IMAGE_SIZE);
    let spec = SplitSpec {
        train: *args.train_fraction.get_or_insert(defaults.train),
        val: *args.val_fraction.get_or_insert(defaults.val),
        test: *args.test_fraction.get_or_insert(defaults.test),
        seed,
    };
    spec.validate()?;
    if size == 0 {
        return Err(CliError::usage("--size must be positive"));
    }
    if !args.image_dir.is_dir() {
        return Err(CliError::missing(format!("image directory {} not found", args.image_dir.display())));
    }
    let mut run = RunManifest::start("ingest", &args)?;
    run.seed("subset", seed);
    run.seed("split", seed);

    let mut records = read_records(&args.metadata)?;
    run.input(&args.metadata)?;
    if let Some(n) = args.subset {
        if n == 0 {
            return Err(CliError::usage("--subset must be positive"));
        }
        records = subsample(&records, n, seed);
    }

    let mut sources = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in &records {
        match locate_image(&args.image_dir, &r.image_id) {
            Ok(p) => sources.push(p),
            Err(chestnet::Error::MissingImage(p)) => missing.push(p),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
        return Err(CliError::missing(format!(
            "{} image file(s) referenced by the metadata are missing:\n{}",
            missing.len(),
            list.join("\n")
        )));
    }

    let images_dir = args.out_dir.join(IMAGES_DIR);
    create_dir(&images_dir)?;
    for (r, src) in records.iter().zip(&sources) {
        run.input(src)?;
        let image = load_image(src).map_err(|e| {
            let mut err = CliError::from(e);
            err.message = format!("{}: {}", src.display(), err.message);
            err
        })?;
        let resized = resize_image(&image, (size, size))?;
        let dst = stored_image_path(&images_dir, &r.image_id);
        if let Some(parent) = dst.parent() {
            create_dir(parent)?;
        }
        write_npy(&resized, Dtype::F32, &dst)?;
    }

    let all = DatasetManifest::new(records);
    let splits = patient_split(&all, &spec)?;
    for (name, part) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        let path = args.out_dir.join(format!("{name}.csv"));
        let file = with_path(std::fs::File::create(&path), &path)?;
        write_manifest_csv(part.records(), Some(name), file)?;
        println!("{name}: {} images", part.total());
    }
    let demographics = summarize_demographics(&all);
    write_file(&args.out_dir.join("demographics.txt"), demographics.to_text())?;
    write_file(&args.out_dir.join("demographics.csv"), demographics.to_csv())?;
    run.finish(&args.out_dir)
}
