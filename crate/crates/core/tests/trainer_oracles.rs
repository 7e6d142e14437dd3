use chestnet::metrics::classification_report;
use chestnet::models::{Classifier, ConvBlock, Model, ModelConfig, Task};
use chestnet::trainer::{
    adam_step, EpochRecord, evaluate, evaluate_probs, load_checkpoint, predict_all, save_checkpoint, train, AdamState, LabeledSet,
    Session, TrainConfig,
};
use chestnet::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` single-channel `side`×`side` images; positives are brighter.
fn toy_set(n: usize, positives: usize, side: usize, seed: u64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * side * side);
    let mut targets = Vec::with_capacity(2 * n);
    for i in 0..n {
        let positive = i < positives;
        let (lo, hi) = if positive { (0.55, 1.0) } else { (0.0, 0.45) };
        images.extend((0..side * side).map(|_| rng.random_range(lo..hi)));
        targets.extend(if positive { [0.0, 1.0] } else { [1.0, 0.0] });
    }
    LabeledSet::new(
        Tensor::new(vec![n, 1, side, side], images).unwrap(),
        Tensor::new(vec![n, 2], targets).unwrap(),
    )
    .unwrap()
}

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        conv_blocks: vec![ConvBlock::pooled(4)],
        dense_widths: vec![8],
        ..ModelConfig::baseline([1, 8, 8], seed)
    };
    Model::build(&cfg).unwrap()
}

fn bits(m: &Model) -> Vec<u64> {
    m.params().iter().chain(m.buffers()).flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn adam_matches_scalar_reference_on_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 7;
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let cfg = TrainConfig { learning_rate: 0.05, ..Default::default() };

    let mut params = vec![Tensor::new(vec![n], x0.clone()).unwrap()];
    let mut state = AdamState::new(&params);
    for _ in 0..10 {
        let g: Vec<f64> = params[0].data().iter().enumerate().map(|(i, x)| a[i] * (x - c[i])).collect();
        adam_step(&mut params, &[Tensor::new(vec![n], g).unwrap()], &mut state, &cfg).unwrap();
    }

    for i in 0..n {
        let (mut x, mut m, mut v) = (x0[i], 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = a[i] * (x - c[i]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * m_hat / (v_hat.sqrt() + 1e-8);
        }
        assert!((params[0].data()[i] - x).abs() < 1e-12);
    }
    assert_eq!(state.t, 10);
}

#[test]
fn identical_runs_are_bit_identical() {
    let (tr, val) = (toy_set(24, 12, 8, 1), toy_set(8, 4, 8, 2));
    let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 9, use_class_weights: true, ..Default::default() };
    let (m1, h1) = train(small_model(3), &tr, Some(&val), &cfg).unwrap();
    let (m2, h2) = train(small_model(3), &tr, Some(&val), &cfg).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(bits(&m1), bits(&m2));
    assert_eq!(h1.len(), 3);
    assert!(h1.epochs.iter().all(|e| e.val_loss.is_some() && e.val_mean_auc.is_some()));
}

#[test]
fn zero_epochs_is_a_no_op() {
    let initial = small_model(5);
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let (m, h) = train(initial.clone(), &toy_set(6, 3, 8, 1), None, &cfg).unwrap();
    assert_eq!(m, initial);
    assert!(h.is_empty());
}

#[test]
fn resume_follows_uninterrupted_trajectory() {
    let (tr, val) = (toy_set(20, 7, 8, 3), toy_set(6, 3, 8, 4));
    let bn_model = {
        let cfg = ModelConfig {
            conv_blocks: vec![ConvBlock { batchnorm: true, ..ConvBlock::pooled(3) }],
            dense_widths: vec![6],
            ..ModelConfig::baseline([1, 8, 8], 11)
        };
        Model::build(&cfg).unwrap()
    };
    let cfg = TrainConfig { epochs: 5, batch_size: 6, seed: 21, use_class_weights: true, ..Default::default() };

    let mut full = Session::new(bn_model.clone(), cfg.clone()).unwrap();
    full.run(&tr, Some(&val)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Session::new(bn_model, cfg).unwrap();
    first.run_epochs(&tr, Some(&val), 3).unwrap();
    save_checkpoint(&first, dir.path()).unwrap();
    drop(first);
    let mut resumed = load_checkpoint(dir.path()).unwrap();
    assert_eq!(resumed.epochs_completed, 3);
    resumed.run(&tr, Some(&val)).unwrap();

    assert_eq!(bits(&resumed.model), bits(&full.model));
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(resumed.history, full.history);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut s = Session::new(small_model(2), TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    s.run(&toy_set(10, 5, 8, 6), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&s, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(bits(&back.model), bits(&s.model));
    assert_eq!(back.adam, s.adam);
    assert_eq!(back.config, s.config);
    assert_eq!(back.model.config(), s.model.config());
    assert_eq!(back.history, s.history);
}

#[test]
fn checkpoint_history_floats_survive_exactly() {
    let mut s = Session::new(small_model(2), TrainConfig { learning_rate: 0.1 + 0.2, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut draw = || f64::from_bits(rng.random_range(0x3c00_0000_0000_0000u64..0x4400_0000_0000_0000));
    for epoch in 1..=200 {
        s.history.epochs.push(EpochRecord {
            epoch,
            train_loss: draw(),
            val_loss: Some(draw()),
            val_accuracy: Some(draw()),
            val_mean_auc: None,
        });
    }
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&s, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    let bits = |h: &chestnet::trainer::TrainHistory| -> Vec<u64> {
        h.epochs.iter().flat_map(|e| [e.train_loss, e.val_loss.unwrap(), e.val_accuracy.unwrap()]).map(f64::to_bits).collect()
    };
    assert_eq!(bits(&back.history), bits(&s.history));
    assert_eq!(back.config.learning_rate.to_bits(), (0.1f64 + 0.2).to_bits());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let s = Session::new(small_model(2), TrainConfig::default()).unwrap();
    let save = || {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&s, dir.path()).unwrap();
        dir
    };

    let dir = save();
    let path = dir.path().join("params_2.npy");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, bytes).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)) && err.to_string().contains("params_2.npy"), "{err}");

    let dir = save();
    let path = dir.path().join("adam_v_0.npy");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = bytes[8].wrapping_add(16);
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

    let dir = save();
    std::fs::write(dir.path().join("version"), "7\n").unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("version `7`"), "{err}");

    let dir = save();
    std::fs::remove_file(dir.path().join("buffers_0.npy")).ok();
    std::fs::remove_file(dir.path().join("adam_m_3.npy")).unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn class_weights_come_from_training_data_only() {
    let tr = toy_set(16, 4, 8, 7);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, use_class_weights: true, ..Default::default() };
    let (a, _) = train(small_model(1), &tr, Some(&toy_set(6, 1, 8, 8)), &cfg).unwrap();
    let (b, _) = train(small_model(1), &tr, Some(&toy_set(9, 8, 8, 9)), &cfg).unwrap();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn missing_class_with_weights_is_rejected_before_training() {
    let cfg = TrainConfig { epochs: 1, use_class_weights: true, ..Default::default() };
    let initial = small_model(1);
    let mut s = Session::new(initial.clone(), cfg).unwrap();
    match s.run(&toy_set(6, 0, 8, 1), None) {
        Err(Error::ZeroClassCount { index: 1, name, .. }) => assert_eq!(name, "Disease Present"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(s.model, initial);
    assert_eq!(s.epochs_completed, 0);
}

/// Reads the answer off pixel (0, 0), which the test sets to the label.
struct Oracle;

impl Classifier for Oracle {
    fn task(&self) -> Task {
        Task::Binary
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let n = batch.shape()[0];
        let per = batch.len() / n;
        let rows = (0..n).flat_map(|i| {
            let y = batch.data()[i * per];
            [1.0 - y, y]
        });
        Tensor::new(vec![n, 2], rows.collect())
    }
}

struct Constant;

impl Classifier for Constant {
    fn task(&self) -> Task {
        Task::Binary
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        Tensor::from_fn(vec![batch.shape()[0], 2], |_| 0.5)
    }
}

fn labelled_pixels(labels: &[f64]) -> LabeledSet {
    let n = labels.len();
    let images = Tensor::from_fn(vec![n, 1, 2, 2], |i| if i % 4 == 0 { labels[i / 4] } else { 0.3 }).unwrap();
    let targets = Tensor::new(vec![n, 2], labels.iter().flat_map(|&y| [1.0 - y, y]).collect()).unwrap();
    LabeledSet::new(images, targets).unwrap()
}

#[test]
fn evaluate_oracle_and_chance_models() {
    let set = labelled_pixels(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    let perfect = evaluate(&Oracle, &set, 0.5).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    let l = &perfect.labels[0];
    assert_eq!((l.name.as_str(), l.auc, l.rates.precision, l.rates.recall, l.rates.f1), ("Disease Present", Some(1.0), 1.0, 1.0, 1.0));

    let chance = evaluate(&Constant, &set, 0.5).unwrap();
    assert_eq!(chance.mean_auc, Some(0.5));

    let single = labelled_pixels(&[0.0, 0.0, 0.0]);
    assert!(matches!(evaluate(&Oracle, &single, 0.5), Err(Error::RocUndefined)));
}

#[test]
fn evaluate_equals_direct_metrics_on_captured_probabilities() {
    let (tr, val) = (toy_set(12, 6, 8, 1), toy_set(9, 4, 8, 2));
    let (model, _) = train(small_model(4), &tr, None, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    let report = evaluate(&model, &val, 0.4).unwrap();

    let probs = predict_all(&model, val.images(), 3).unwrap();
    let n = val.len();
    let col = |t: &Tensor| Tensor::new(vec![n, 1], (0..n).map(|i| t.data()[2 * i + 1]).collect()).unwrap();
    let direct = classification_report(&col(&probs), &col(val.targets()), 0.4)
        .unwrap()
        .with_label_names(&["Disease Present"])
        .unwrap();
    assert_eq!(report, direct);
    assert_eq!(report, evaluate_probs(Task::Binary, &probs, val.targets(), 0.4).unwrap());
    assert_eq!(report.threshold, 0.4);
}
