use marnet::data::{synth_segmentation, synth_shapes, Dataset, ShapeKind};
use marnet::harness::{
    ablate, bench, checkpoint_bytes, checkpoint_from_bytes, evaluate, load_checkpoint, predict, save_checkpoint,
    train, BenchConfig, EvalConfig, SweepSpec, TrainConfig, TrainOptions, TrainState, CSV_HEADER,
};
use marnet::model::{Model, ModelConfig};
use marnet::{CheckpointError, Error};

fn two_classes(per_class: usize, points: usize, seed: u64) -> Dataset {
    let all = synth_shapes(per_class, points, seed).unwrap();
    let keep: Vec<usize> = (0..all.len()).filter(|i| i % 4 < 2).collect();
    let mut d = all.subset(&keep);
    d.class_names.truncate(2);
    d
}

fn tiny(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        points: 64,
        batch_size: 8,
        ..TrainConfig::new(ModelConfig::lite(2, 2), epochs, seed)
    }
}

fn values(model: &Model) -> Vec<Vec<f32>> {
    model.params.params().iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = two_classes(2, 64, 1);
    let out = train(&tiny(0, 5), &data, &TrainOptions::default()).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.state.epoch, 0);
    assert!(values(&out.model) == values(&Model::build(&ModelConfig::lite(2, 2), 5).unwrap()));
}

#[test]
fn learning_rate_steps_down() {
    let cfg = TrainConfig {
        lr: 0.01,
        lr_decay: 0.5,
        decay_every: 3,
        ..tiny(10, 0)
    };
    let lrs: Vec<f64> = (0..7).map(|e| cfg.lr_at(e)).collect();
    assert_eq!(lrs, vec![0.01, 0.01, 0.01, 0.005, 0.005, 0.005, 0.0025]);
    let mut bad = cfg.clone();
    bad.lr = 0.0;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.batch_size = 0;
    assert!(bad.validate().is_err());
}

#[test]
fn training_overfits_a_small_set() {
    let data = two_classes(8, 64, 2);
    assert_eq!(data.len(), 16);
    let cfg = TrainConfig {
        augment: false,
        batch_size: 16,
        ..tiny(30, 3)
    };
    let out = train(&cfg, &data, &TrainOptions::default()).unwrap();
    let first = out.log[0].loss;
    let last = out.log.last().unwrap().loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn seeded_training_is_byte_reproducible() {
    let data = two_classes(4, 64, 4);
    let a = train(&tiny(2, 9), &data, &TrainOptions::default()).unwrap();
    let b = train(&tiny(2, 9), &data, &TrainOptions::default()).unwrap();
    assert!(checkpoint_bytes(&a.model, &a.state) == checkpoint_bytes(&b.model, &b.state));
    let c = train(&tiny(2, 10), &data, &TrainOptions::default()).unwrap();
    assert!(values(&a.model) != values(&c.model));
}

#[test]
fn training_writes_checkpoints_and_tracks_the_best_epoch() {
    let data = two_classes(4, 64, 6);
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        val: Some(&data),
        out_dir: Some(dir.path().to_path_buf()),
        verbose: false,
    };
    let out = train(&tiny(3, 7), &data, &opts).unwrap();
    let (epoch, metric) = out.best.unwrap();
    let best_logged = out.log.iter().filter_map(|l| l.val_metric).fold(f64::MIN, f64::max);
    assert_eq!(metric, best_logged);
    assert!((1..=3).contains(&epoch));
    let (last, state) = load_checkpoint(dir.path().join("last.marc")).unwrap();
    assert_eq!(state.epoch, 3);
    assert!(checkpoint_bytes(&last, &state) == checkpoint_bytes(&out.model, &out.state));
    let best = std::fs::read(dir.path().join("best.marc")).unwrap();
    let (best_model, best_state) = checkpoint_from_bytes(&best).unwrap();
    assert!(best_state.epoch as usize == epoch);
    assert!(checkpoint_bytes(&best_model, &best_state) == best);
    assert!(values(&best_model) == values(&out.best_model.unwrap()));
}

#[test]
fn early_stop_ends_training() {
    let data = two_classes(4, 64, 6);
    let cfg = TrainConfig {
        stop_at: Some(0.0),
        ..tiny(5, 7)
    };
    let out = train(&cfg, &data, &TrainOptions { val: Some(&data), ..TrainOptions::default() }).unwrap();
    assert_eq!(out.log.len(), 1);
}

#[test]
fn single_vote_without_augmentation_is_plain_evaluation() {
    let model = Model::build(&ModelConfig::lite(4, 2), 11).unwrap();
    let data = synth_shapes(3, 128, 12).unwrap();
    let plain = EvalConfig::default();
    let one = EvalConfig {
        augment: false,
        ..plain
    };
    assert_eq!(predict(&model, &data, &plain).unwrap(), predict(&model, &data, &one).unwrap());

    let ten = EvalConfig { voting: 10, ..one };
    let a = predict(&model, &data, &plain).unwrap();
    let b = predict(&model, &data, &ten).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.labels(4), y.labels(4));
        assert!(x.probs.iter().zip(&y.probs).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    let small_batches = EvalConfig { batch_size: 5, ..plain };
    assert_eq!(predict(&model, &data, &small_batches).unwrap(), a);
    let report = evaluate(&model, &data, &plain).unwrap();
    assert_eq!(report.samples, 12);
    assert!(report.part_category_miou.is_none());
}

#[test]
fn evaluation_rejects_mismatched_data() {
    let model = Model::build(&ModelConfig::lite(40, 2), 0).unwrap();
    let data = synth_shapes(1, 64, 0).unwrap();
    assert!(matches!(evaluate(&model, &data, &EvalConfig::default()), Err(Error::Dataset(_))));
    let seg = synth_segmentation(&[ShapeKind::Sphere], 1, 64, 0).unwrap();
    let model = Model::build(&ModelConfig::lite(4, 2), 0).unwrap();
    assert!(evaluate(&model, &seg, &EvalConfig::default()).is_err());
    let zero = EvalConfig {
        voting: 0,
        ..EvalConfig::default()
    };
    assert!(evaluate(&model, &data, &zero).is_err());
}

#[test]
fn segmentation_evaluation_reports_miou() {
    let model = Model::build(&ModelConfig::lite_segmenter(2, 2), 13).unwrap();
    let data = synth_segmentation(&[ShapeKind::Sphere, ShapeKind::Torus], 2, 128, 14).unwrap();
    let report = evaluate(&model, &data, &EvalConfig::default()).unwrap();
    let miou = report.part_category_miou.unwrap();
    assert!((0.0..=1.0).contains(&miou));
    assert_eq!(report.confusion.total(), 4 * 128);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = Model::build(&ModelConfig::lite(4, 2), 15).unwrap();
    let bytes = checkpoint_bytes(&model, &TrainState::default());
    let (back, state) = checkpoint_from_bytes(&bytes).unwrap();
    assert!(checkpoint_bytes(&back, &state) == bytes);
    let cloud = &synth_shapes(1, 256, 16).unwrap().clouds[0];
    let a = model.classify(&[cloud]).unwrap();
    let b = back.classify(&[cloud]).unwrap();
    let bits = |v: &Vec<Vec<f32>>| -> Vec<u32> { v[0].iter().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.marc");
    save_checkpoint(&path, &model, &state).unwrap();
    assert!(std::fs::read(&path).unwrap() == bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::BadMagic))));
    assert!(matches!(
        checkpoint_from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::Checkpoint(CheckpointError::Truncated(_)))
    ));
}

#[test]
fn bench_reports_sane_timings() {
    let lite = Model::build(&ModelConfig::lite(4, 2), 0).unwrap();
    let full = Model::build(&ModelConfig::classifier(4, 2), 0).unwrap();
    let cfg = BenchConfig {
        points: 256,
        ..BenchConfig::default()
    };
    let l = bench(&lite, &cfg).unwrap();
    let f = bench(&full, &cfg).unwrap();
    assert_eq!(l.runs, 20);
    assert!(l.median_batch_ms < f.median_batch_ms, "{} vs {}", l.median_batch_ms, f.median_batch_ms);
    assert!(l.peak_bytes > 0 && l.peak_bytes < f.peak_bytes);

    let batched = bench(&lite, &BenchConfig { batch_size: 8, ..cfg }).unwrap();
    assert!((batched.per_sample_ms * 8.0 - batched.median_batch_ms).abs() < 1e-9);
    let again = bench(&lite, &cfg).unwrap();
    let ratio = again.median_batch_ms / l.median_batch_ms;
    assert!((0.8..1.25).contains(&ratio), "run-to-run ratio {ratio}");
    assert!(bench(&lite, &BenchConfig { runs: 19, ..cfg }).is_err());
    assert!(bench(&lite, &BenchConfig { batch_size: 0, ..cfg }).is_err());
}

#[test]
fn group_sweep_lists_decreasing_parameters() {
    let data = two_classes(2, 64, 17);
    let base = TrainConfig::new(ModelConfig::classifier(2, 2), 1, 0);
    let spec = SweepSpec::Groups {
        values: vec![1, 2, 4, 8],
        train: false,
    };
    let table = ablate(&spec, &base, &data, &data, false).unwrap();
    let params: Vec<usize> = table.rows.iter().map(|r| r.parameters).collect();
    assert!(params.windows(2).all(|w| w[0] > w[1]), "{params:?}");
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for line in lines {
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
    }
}

#[test]
fn component_sweep_drops_residual_edges() {
    let data = two_classes(2, 64, 18);
    let spec: SweepSpec = serde_json::from_str(r#"{"sweep": "components", "toggles": ["r", "voting"], "voting": 2}"#).unwrap();
    let table = ablate(&spec, &tiny(1, 19), &data, &data, false).unwrap();
    let settings: Vec<&str> = table.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(settings, vec!["full", "no-residual", "no-voting"]);
    let (full, no_r) = (&table.rows[0], &table.rows[1]);
    assert_eq!(full.parameters, no_r.parameters);
    assert!(no_r.graph_edges < full.graph_edges);
    assert!(table.rows.iter().all(|r| r.overall_accuracy.is_some()));

    let empty = SweepSpec::Components {
        toggles: vec![],
        voting: 10,
    };
    assert!(ablate(&empty, &tiny(1, 0), &data, &data, false).unwrap().rows.is_empty());
    let unknown = SweepSpec::Components {
        toggles: vec!["dropout".into()],
        voting: 10,
    };
    assert!(ablate(&unknown, &tiny(1, 0), &data, &data, false).is_err());
}

#[test]
fn noise_sweep_zero_row_matches_plain_evaluation() {
    let data = two_classes(3, 64, 20);
    let cfg = tiny(2, 21);
    let table = ablate(&SweepSpec::Noise { values: vec![0, 10] }, &cfg, &data, &data, false).unwrap();
    let model = train(&cfg, &data, &TrainOptions::default()).unwrap().model;
    let plain = evaluate(&model, &data, &marnet::harness::base_eval(&cfg)).unwrap();
    assert_eq!(table.rows[0].overall_accuracy, Some(plain.overall_accuracy));
    assert_eq!(table.rows[0].mean_class_accuracy, Some(plain.mean_class_accuracy));
    assert_eq!(table.rows.len(), 2);
}
