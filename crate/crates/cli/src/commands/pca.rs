use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chestnet::dataset::npy::encode_npy;
use chestnet::dataset::{load_image, Dtype};
use chestnet::pca::{compress, components_for_variance, fit_channel_pca, save_compressed, variance_curve};
use chestnet::plot::{LinePlot, Series};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{create_dir, write_file};
use crate::config::Overlay;
use crate::error::{with_path, CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(Args, Serialize, Deserialize, Default, Debug)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct PcaArgs {
    /// An image file, or a directory whose .pgm/.npy files are all analysed.
    #[serde(skip_deserializing)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write compressed containers keeping K components per channel.
    #[arg(long, value_name = "K")]
    pub components: Option<usize>,
    /// Report the components needed to reach this cumulative variance ratio.
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
}

impl Overlay for PcaArgs {
    fn overlay(self, file: Self) -> Self {
        PcaArgs {
            out: self.out.or(file.out),
            components: self.components.or(file.components),
            threshold: self.threshold.or(file.threshold),
            ..self
        }
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "npy")
    )
}

fn input_images(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::missing(format!("{} not found", input.display())));
    }
    let mut files = Vec::new();
    for entry in with_path(fs::read_dir(input), input)? {
        let path = with_path(entry, input)?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::missing(format!("no .pgm or .npy images in {}", input.display())));
    }
    Ok(files)
}

fn dir_size(dir: &Path) -> CliResult<u64> {
    let mut total = 0;
    for entry in with_path(fs::read_dir(dir), dir)? {
        total += with_path(with_path(entry, dir)?.metadata(), dir)?.len();
    }
    Ok(total)
}

pub fn run(args: PcaArgs) -> CliResult<()> {
    let out = args.out.clone().ok_or_else(|| CliError::usage("--out is required"))?;
    if let Some(t) = args.threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(CliError::usage(format!("--threshold must lie in (0, 1], got {t}")));
        }
    }
    let files = input_images(&args.input)?;
    let mut run = RunManifest::start("pca", &args)?;
    create_dir(&out)?;

    let mut summary = String::from("image,channel,k_max,threshold_k,stored_k,container_bytes,raw_npy_bytes\n");
    for file in &files {
        run.input(file)?;
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let image = load_image(file)?;
        let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
        if let Some(k) = args.components {
            if k == 0 || k > h.min(w) {
                return Err(CliError::usage(format!(
                    "--components {k} out of range for {} ({h}x{w}): valid range is 1..={}",
                    file.display(),
                    h.min(w)
                )));
            }
        }

        let mut curves_csv = String::from("channel,k,cumulative_ratio\n");
        let mut series = Vec::with_capacity(c);
        let mut fits = Vec::with_capacity(c);
        for ch in 0..c {
            let pca = fit_channel_pca(&image.index_axis0(ch)?)?;
            let curve = variance_curve(&pca);
            for &(k, ratio) in &curve {
                let _ = writeln!(curves_csv, "{ch},{k},{ratio}");
            }
            series.push(Series::new(format!("channel {ch}"), curve.iter().map(|&(k, r)| (k as f64, r)).collect()));
            let threshold_k = args.threshold.map(|t| components_for_variance(&pca, t)).transpose()?;
            if let (Some(t), Some(k)) = (args.threshold, threshold_k) {
                println!("{stem} channel {ch}: {k} component(s) reach {t} of the variance");
            }
            fits.push((pca.k_max(), threshold_k));
        }
        write_file(&out.join(format!("{stem}_variance.csv")), curves_csv)?;
        let plot = LinePlot {
            title: format!("Cumulative explained variance: {stem}"),
            x_label: "components".into(),
            y_label: "cumulative variance ratio".into(),
            x_range: (0.0, h.min(w) as f64),
            y_range: (0.0, 1.0),
            series,
        };
        write_file(&out.join(format!("{stem}_variance.svg")), plot.to_svg())?;

        let keep = args
            .components
            .or_else(|| args.threshold.map(|_| fits.iter().filter_map(|f| f.1).max().unwrap_or(0).max(1)));
        let mut stored = vec![None; c];
        let mut sizes = (String::new(), String::new());
        if let Some(k) = keep {
            let compressed = compress(&image, k)?;
            let dir = out.join(format!("{stem}_pca"));
            save_compressed(&compressed, &dir)?;
            let container = dir_size(&dir)?;
            let raw = encode_npy(&image, Dtype::F64)?.len();
            println!("{stem}: container {container} bytes, raw f8 npy {raw} bytes");
            for (s, ch) in stored.iter_mut().zip(&compressed.channels) {
                *s = Some(ch.k);
            }
            sizes = (container.to_string(), raw.to_string());
        }
        let opt = |v: Option<usize>| v.map(|k| k.to_string()).unwrap_or_default();
        for (ch, (k_max, threshold_k)) in fits.iter().enumerate() {
            let _ = writeln!(
                summary,
                "{stem},{ch},{k_max},{},{},{},{}",
                opt(*threshold_k),
                opt(stored[ch]),
                sizes.0,
                sizes.1
            );
        }
    }
    write_file(&out.join("pca_summary.csv"), summary)?;
    run.finish(&out)
}
