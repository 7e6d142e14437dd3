use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chestnet::dataset::{read_npy, write_npy, Dtype};
use chestnet::models::{Model, ModelConfig, Task};
use chestnet::pca::{fit_channel_pca, variance_curve};
use chestnet::trainer::{save_checkpoint, Session, TrainConfig};
use chestnet::Tensor;
use sha2::{Digest, Sha256};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

fn chestnet<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_chestnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ingest(out: &Path, extra: &[&str]) -> Output {
    let f = fixture();
    let mut args: Vec<&OsStr> = vec![
        "ingest".as_ref(),
        f.join("metadata.csv").as_os_str().to_owned().leak(),
        f.join("images").as_os_str().to_owned().leak(),
        out.as_os_str(),
        "--size".as_ref(),
        "16".as_ref(),
    ];
    args.extend(extra.iter().map(|s| OsStr::new(*s)));
    chestnet(args)
}

/// Every file below `dir` except run manifests, with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name() != Some(OsStr::new("run_manifest.json")) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ingest_partitions_the_fixture_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let before = snapshot(&fixture());
    let a = tmp.path().join("a");
    let out = ingest(&a, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let mut ids = Vec::new();
    for split in ["train", "val", "test"] {
        for row in csv_rows(&a.join(format!("{split}.csv"))) {
            assert_eq!(row.last().unwrap(), split);
            ids.push(row[0].clone());
        }
    }
    ids.sort();
    assert_eq!(ids.len(), 12);
    ids.dedup();
    assert_eq!(ids.len(), 12);
    for id in &ids {
        let (img, dtype) = read_npy(a.join("images").join(id).with_extension("npy")).unwrap();
        assert_eq!((img.shape(), dtype), (&[1, 16, 16][..], Dtype::F32));
    }
    assert!(fs::read_to_string(a.join("demographics.txt")).unwrap().contains("12"));

    let b = tmp.path().join("b");
    assert_eq!(code(&ingest(&b, &[])), 0);
    assert_eq!(snapshot(&a), snapshot(&b));
    assert_eq!(snapshot(&fixture()), before);
}

#[test]
fn run_manifest_digests_are_recomputable() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ingest(tmp.path(), &["--seed", "3"])), 0);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(m["config"]["size"], 16);
    assert_eq!(m["seeds"]["split"], 3);
    assert!(m["started_at"].is_string() && m["finished_at"].is_string());
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 13);
    for input in inputs {
        let bytes = fs::read(input["path"].as_str().unwrap()).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(input["sha256"], hex);
    }
}

#[test]
fn subset_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let pick = |name: &str| {
        let dir = tmp.path().join(name);
        assert_eq!(code(&ingest(&dir, &["--subset", "8", "--seed", "1"])), 0);
        let mut ids: Vec<String> = ["train", "val", "test"]
            .iter()
            .flat_map(|s| csv_rows(&dir.join(format!("{s}.csv"))))
            .map(|r| r[0].clone())
            .collect();
        ids.sort();
        ids
    };
    let first = pick("a");
    assert_eq!(first.len(), 8);
    assert_eq!(first, pick("b"));
}

#[test]
fn ingest_error_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    fs::create_dir(&images).unwrap();
    fs::copy(fixture().join("images/00000001_000.pgm"), images.join("a.pgm")).unwrap();
    let header = "Image Index,Finding Labels,Patient ID\n";

    let meta = tmp.path().join("missing.csv");
    fs::write(&meta, format!("{header}a.png,No Finding,1\nghost.png,Mass,2\n")).unwrap();
    let out = chestnet([OsStr::new("ingest"), meta.as_ref(), images.as_ref(), tmp.path().join("o1").as_ref()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("ghost.png"), "{}", stderr(&out));

    let meta = tmp.path().join("bad.csv");
    fs::write(&meta, format!("{header}a.png,No Finding,1\nb.png,Not A Disease,2\n")).unwrap();
    let out = chestnet([OsStr::new("ingest"), meta.as_ref(), images.as_ref(), tmp.path().join("o2").as_ref()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = chestnet([OsStr::new("ingest"), tmp.path().join("nope.csv").as_ref(), images.as_ref(), tmp.path().as_ref()]);
    assert_eq!(code(&out), 3);

    let out = chestnet(["ingest", "--bogus"]);
    assert_eq!(code(&out), 2);
}

fn rank_one_image(path: &Path, c: usize, h: usize, w: usize) {
    let img = Tensor::from_fn(vec![c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        (y as f64 - 2.5 + ch as f64) * ((x as f64) * 0.3).sin()
    })
    .unwrap();
    write_npy(&img, Dtype::F64, path).unwrap();
}

#[test]
fn pca_rank_one_threshold_reports_one_component() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("r1.npy");
    rank_one_image(&img, 3, 10, 12);
    let out = chestnet([OsStr::new("pca"), img.as_ref(), "--threshold".as_ref(), "1.0".as_ref(), "--out".as_ref(), tmp.path().join("o").as_ref()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for ch in 0..3 {
        assert!(stdout.contains(&format!("r1 channel {ch}: 1 component(s)")), "{stdout}");
    }
    let summary = csv_rows(&tmp.path().join("o/pca_summary.csv"));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r[3] == "1" && r[4] == "1"));
}

#[test]
fn pca_curve_csv_matches_library_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("img.npy");
    let img = Tensor::rand_uniform(vec![2, 9, 7], &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1)).unwrap();
    write_npy(&img, Dtype::F64, &path).unwrap();
    let out = chestnet([OsStr::new("pca"), path.as_ref(), "--out".as_ref(), tmp.path().join("o").as_ref()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let rows = csv_rows(&tmp.path().join("o/img_variance.csv"));
    let mut expected = Vec::new();
    for ch in 0..2 {
        for (k, r) in variance_curve(&fit_channel_pca(&img.index_axis0(ch).unwrap()).unwrap()) {
            expected.push((ch, k, r));
        }
    }
    let got: Vec<(usize, usize, f64)> =
        rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    assert_eq!(got, expected);
    let svg = fs::read_to_string(tmp.path().join("o/img_variance.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    // no --components or --threshold: curves only
    assert!(!tmp.path().join("o/img_pca").exists());
}

#[test]
fn pca_container_beats_raw_npy_at_forty_components() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("big.npy");
    let img = Tensor::rand_uniform(vec![3, 256, 256], &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2)).unwrap();
    write_npy(&img, Dtype::F64, &path).unwrap();
    let out = chestnet([OsStr::new("pca"), path.as_ref(), "--components".as_ref(), "40".as_ref(), "--out".as_ref(), tmp.path().join("o").as_ref()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let container: u64 = fs::read_dir(tmp.path().join("o/big_pca")).unwrap().map(|e| e.unwrap().metadata().unwrap().len()).sum();
    let raw = fs::metadata(&path).unwrap().len();
    assert!(container < raw, "{container} vs {raw}");
}

#[test]
fn pca_component_count_out_of_range() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("r1.npy");
    rank_one_image(&img, 1, 6, 8);
    for k in ["0", "7"] {
        let out = chestnet([OsStr::new("pca"), img.as_ref(), "--components".as_ref(), k.as_ref(), "--out".as_ref(), tmp.path().join("o").as_ref()]);
        assert_eq!(code(&out), 2);
        assert!(stderr(&out).contains("valid range is 1..=6"), "{}", stderr(&out));
    }
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<&OsStr> = vec!["train".as_ref(), data.as_os_str(), "--out".as_ref(), out.as_os_str()];
    args.extend(extra.iter().map(|s| OsStr::new(*s)));
    chestnet(args)
}

#[test]
fn train_writes_history_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);

    let out = train(&data, &tmp.path().join("r1"), &["--task", "binary", "--epochs", "5", "--weighted"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let history = fs::read(tmp.path().join("r1/history.csv")).unwrap();
    assert_eq!(csv_rows(&tmp.path().join("r1/history.csv")).len(), 5);
    assert!(tmp.path().join("r1/checkpoint/config.json").is_file());

    assert_eq!(code(&train(&data, &tmp.path().join("r2"), &["--task", "binary", "--epochs", "5", "--weighted"])), 0);
    assert_eq!(fs::read(tmp.path().join("r2/history.csv")).unwrap(), history);
    assert_eq!(snapshot(&tmp.path().join("r1")), snapshot(&tmp.path().join("r2")));
}

#[test]
fn train_config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 2, "batch-size": 4, "lr": 0.01}"#).unwrap();

    let out = train(&data, &tmp.path().join("a"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(csv_rows(&tmp.path().join("a/history.csv")).len(), 2);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/run_manifest.json")).unwrap()).unwrap();
    assert_eq!((m["config"]["batch-size"].as_u64(), m["config"]["lr"].as_f64()), (Some(4), Some(0.01)));
    assert_eq!(m["config"]["model"], "baseline");

    let out = train(&data, &tmp.path().join("b"), &["--config", cfg.to_str().unwrap(), "--epochs", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(csv_rows(&tmp.path().join("b/history.csv")).len(), 3);

    fs::write(&cfg, r#"{"epoch": 2}"#).unwrap();
    let out = train(&data, &tmp.path().join("c"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));
}

#[test]
fn train_error_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);

    let out = train(&data, &tmp.path().join("x"), &["--task", "multilabel", "--model", "baseline"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cannot serve the multilabel task"), "{}", stderr(&out));

    // the fixture has no Hernia cases, so multilabel weights are undefined
    let out = train(&data, &tmp.path().join("y"), &["--task", "multilabel", "--weighted", "--epochs", "1"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("cannot weight a class with zero samples"), "{}", stderr(&out));

    let healthy = tmp.path().join("healthy");
    fs::create_dir(&healthy).unwrap();
    let text = fs::read_to_string(data.join("train.csv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| l.starts_with("Image") || l.contains("No Finding")).collect();
    fs::write(healthy.join("train.csv"), kept.join("\n") + "\n").unwrap();
    std::os::unix::fs::symlink(data.join("images"), healthy.join("images")).unwrap();
    let out = train(&healthy, &tmp.path().join("z"), &["--weighted", "--epochs", "1"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("Disease Present"), "{}", stderr(&out));

    let out = train(&tmp.path().join("nowhere"), &tmp.path().join("w"), &[]);
    assert_eq!(code(&out), 3);
}

/// Binary model whose logit gap is `40 * pixel(8, 8) - 20`; on the fixture
/// that pixel is bright exactly on diseased images.
fn oracle_checkpoint(dir: &Path) {
    let cfg = ModelConfig {
        conv_blocks: vec![],
        dense_widths: vec![],
        ..ModelConfig::baseline([1, 16, 16], 0)
    };
    let model = Model::build(&cfg).unwrap();
    assert_eq!(model.param_names(), ["output.weight", "output.bias"]);
    let centre = 8 * 16 + 8;
    let weight = Tensor::from_fn(vec![256, 2], |i| match (i / 2 == centre, i % 2) {
        (true, 0) => -20.0,
        (true, _) => 20.0,
        _ => 0.0,
    })
    .unwrap();
    let bias = Tensor::new(vec![2], vec![10.0, -10.0]).unwrap();
    let mut model = model;
    model.load_state(vec![weight, bias], vec![]).unwrap();
    assert_eq!(model.config().task, Task::Binary);
    save_checkpoint(&Session::new(model, TrainConfig::default()).unwrap(), dir).unwrap();
}

fn trapezoid(rows: &[Vec<String>]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[test]
fn eval_oracle_checkpoint_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);
    let ckpt = tmp.path().join("oracle");
    oracle_checkpoint(&ckpt);

    let roc = tmp.path().join("plots/roc.svg");
    let out = chestnet([
        OsStr::new("eval"),
        ckpt.as_ref(),
        data.join("train.csv").as_ref(),
        "--out".as_ref(),
        tmp.path().join("ev").as_ref(),
        "--roc".as_ref(),
        roc.as_ref(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&tmp.path().join("ev/metrics.csv"));
    let label = &rows[0];
    assert_eq!(&label[..7], ["label", "Disease Present", "1", "1", "1", "1", "1"]);
    assert!(rows.iter().all(|r| r[3..7].iter().all(|v| v == "1")));

    let svg = fs::read_to_string(&roc).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let curve = csv_rows(&tmp.path().join("plots/roc.csv"));
    assert_eq!(trapezoid(&curve), 1.0);
}

#[test]
fn eval_roc_csv_reintegrates_to_reported_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);
    assert_eq!(code(&train(&data, &tmp.path().join("run"), &["--epochs", "2", "--seed", "5"])), 0);
    let roc = tmp.path().join("roc.svg");
    let out = chestnet([
        OsStr::new("eval"),
        tmp.path().join("run/checkpoint").as_ref(),
        data.join("train.csv").as_ref(),
        "--out".as_ref(),
        tmp.path().join("ev").as_ref(),
        "--roc".as_ref(),
        roc.as_ref(),
        "--threshold".as_ref(),
        "0.3".as_ref(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reported: f64 = csv_rows(&tmp.path().join("ev/metrics.csv"))[0][2].parse().unwrap();
    let area = trapezoid(&csv_rows(&tmp.path().join("roc.csv")));
    assert!((area - reported).abs() < 1e-12, "{area} vs {reported}");
    assert_eq!(csv_rows(&tmp.path().join("ev/metrics.csv"))[0][11], "0.3");
}

#[test]
fn eval_error_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&ingest(&data, &[])), 0);
    let ckpt = tmp.path().join("oracle");
    oracle_checkpoint(&ckpt);
    let ev = tmp.path().join("ev");

    let out = chestnet([OsStr::new("eval"), tmp.path().join("none").as_ref(), data.join("test.csv").as_ref(), "--out".as_ref(), ev.as_ref()]);
    assert_eq!(code(&out), 2);

    let single = data.join("single.csv");
    let text = fs::read_to_string(data.join("train.csv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| l.starts_with("Image") || l.contains("No Finding")).collect();
    fs::write(&single, kept.join("\n") + "\n").unwrap();
    let out = chestnet([OsStr::new("eval"), ckpt.as_ref(), single.as_ref(), "--out".as_ref(), ev.as_ref()]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains(&chestnet::Error::RocUndefined.to_string()), "{}", stderr(&out));

    fs::write(ckpt.join("version"), "9\n").unwrap();
    let out = chestnet([OsStr::new("eval"), ckpt.as_ref(), data.join("test.csv").as_ref(), "--out".as_ref(), ev.as_ref()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
}
