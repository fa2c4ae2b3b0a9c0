mod common;

use common::{classifier_shapes, lite_shapes, permuted, residual_path_gradient, segmenter_shapes, shape_cloud};
use marnet::data::PointCloud;
use marnet::layers::{Ctx, Stage};
use marnet::model::{batch_points, forward_classify, Model, ModelConfig};
use marnet::tensor::{Mode, Tape};

fn shapes(model: &Model, n: usize) -> (Vec<(Stage, usize, usize, usize)>, usize) {
    let cloud = shape_cloud(n, 3);
    let mut tape = Tape::<f32>::inference();
    let trace = model.net.forward(&mut tape, &model.params, &mut Ctx::eval(), batch_points(&[&cloud]).unwrap()).unwrap();
    (trace.shapes(), tape.value(trace.logits).len())
}

fn params(config: ModelConfig) -> usize {
    Model::build(&config, 0).unwrap().params.num_scalars()
}

fn within(value: usize, target: f64, tol: f64) -> bool {
    (value as f64 - target).abs() <= tol * target
}

#[test]
fn classifier_levels_match_the_table() {
    let model = Model::build(&ModelConfig::classifier(40, 2), 1).unwrap();
    let (got, logits) = shapes(&model, 1024);
    assert_eq!(got, classifier_shapes());
    assert_eq!(logits, 40);
    let widths: Vec<usize> = model.net.head.layers.iter().map(|l| l.c_out).collect();
    assert_eq!(widths, vec![512, 256, 40]);
}

#[test]
fn lite_levels_follow_the_widths() {
    let model = Model::build(&ModelConfig::lite(40, 2), 1).unwrap();
    let (got, logits) = shapes(&model, 1024);
    assert_eq!(got, lite_shapes());
    assert_eq!(logits, 40);
    assert_eq!(model.net.head.layers[0].c_in, 448);
}

#[test]
fn segmenter_levels_match_the_table() {
    let model = Model::build(&ModelConfig::segmenter(4, 2), 1).unwrap();
    let (got, logits) = shapes(&model, 1024);
    assert_eq!(got, segmenter_shapes());
    assert_eq!(logits, 1024 * 4);
}

#[test]
fn parameter_counts_fall_in_band() {
    for (g, target) in [(1, 1.85e6), (2, 1.13e6), (4, 0.84e6), (8, 0.67e6)] {
        let p = params(ModelConfig::classifier(40, g));
        assert!(within(p, target, 0.10), "N_g={g}: {p}");
    }
    let lite = params(ModelConfig::lite(40, 2));
    assert!(within(lite, 0.68e6, 0.10), "lite: {lite}");

    let by_groups: Vec<usize> = [1, 2, 4, 8].iter().map(|&g| params(ModelConfig::classifier(40, g))).collect();
    assert!(by_groups.windows(2).all(|w| w[0] > w[1]), "{by_groups:?}");
    let by_levels: Vec<usize> = (3..=6).map(|l| params(ModelConfig::with_levels(l, 40, 2).unwrap())).collect();
    assert!(by_levels.windows(2).all(|w| w[0] < w[1]), "{by_levels:?}");
}

#[test]
fn complexity_report_is_consistent() {
    let cls = Model::build(&ModelConfig::classifier(40, 2), 0).unwrap();
    let report = cls.complexity();
    assert_eq!(report.parameters, cls.params.num_scalars());
    assert_eq!(report.parameters, report.layers.iter().map(|l| l.params).sum::<usize>());
    assert_eq!(report.flops, report.layers.iter().map(|l| l.flops).sum::<u64>());
    assert!(within(report.flops as usize, 1040e6, 0.35), "{}", report.flops);

    let lite = Model::build(&ModelConfig::lite(40, 2), 0).unwrap().complexity();
    assert!(lite.flops < report.flops);
}

#[test]
fn grouped_layer_parameter_closed_form() {
    use marnet::layers::SharedMlp;
    use marnet::tensor::ParamStore;
    use rand::SeedableRng;
    let mut s = ParamStore::new();
    let mlp = SharedMlp::new(&mut s, "l", 6, &[16], 2, false, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
    // 2 groups of 3x8 weights, plus the batch-norm scale and shift.
    assert_eq!(mlp.num_params(), 2 * 3 * 8 + 2 * 16);
    assert_eq!(mlp.flops(512 * 16), 2 * 512 * 16 * 48);
}

#[test]
fn sparse_inputs_keep_channel_widths() {
    let model = Model::build(&ModelConfig::classifier(4, 2), 2).unwrap();
    for n in [64, 128, 256, 512] {
        let (got, logits) = shapes(&model, n);
        let widths: Vec<usize> = got.iter().map(|s| s.2).collect();
        let want: Vec<usize> = classifier_shapes().iter().map(|s| s.2).collect();
        assert_eq!(widths, want, "{n} points");
        assert_eq!(logits, 4);
    }
}

#[test]
fn eval_forward_is_pure_and_batch_independent() {
    let model = Model::build(&ModelConfig::lite(4, 2), 4).unwrap();
    let a = shape_cloud(256, 5);
    let b = shape_cloud(256, 6);
    let first = model.classify(&[&a, &a, &b]).unwrap();
    assert_eq!(first[0], first[1]);
    assert_ne!(first[0], first[2]);
    assert_eq!(model.classify(&[&a, &a, &b]).unwrap(), first);
    let alone = forward_classify(&model, &a, Mode::Eval).unwrap();
    for (x, y) in alone.iter().zip(&first[0]) {
        assert!((x - y).abs() < 1e-5);
    }
    assert!(model.segment(&[&a]).is_err());
    assert!(model.classify(&[&a, &shape_cloud(128, 7)]).is_err());
}

#[test]
fn classifier_ignores_point_order() {
    let model = Model::build(&ModelConfig::classifier(4, 2), 8).unwrap();
    let cloud = shape_cloud(256, 9);
    let base = model.classify(&[&cloud]).unwrap();
    for seed in 0..3 {
        let other = model.classify(&[&permuted(&cloud, seed)]).unwrap();
        let diff = base[0].iter().zip(&other[0]).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-4, "permutation {seed}: {diff}");
    }
}

#[test]
fn zeroed_stages_still_pass_gradient_to_the_backbone() {
    assert!(residual_path_gradient(&ModelConfig::classifier(4, 2), 10) > 0.0);
    assert!(residual_path_gradient(&ModelConfig::lite(4, 2), 11) > 0.0);
}

#[test]
fn segmenter_gradient_reaches_every_point() {
    let model = Model::build(&ModelConfig::lite_segmenter(2, 2), 12).unwrap();
    let cloud = shape_cloud(256, 13);
    let pts = batch_points(&[&cloud]).unwrap();
    let mut tape = Tape::<f32>::new();
    let trace = model.net.forward(&mut tape, &model.params, &mut Ctx::eval(), pts).unwrap();
    let labels: Vec<usize> = (0..256).map(|i| i % 2).collect();
    let loss = tape.softmax_cross_entropy(trace.logits, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    let fp4 = trace.find(Stage::Fp, 4).unwrap();
    assert_eq!(fp4.shape(), (128, 256));
    let g = grads.get(fp4.feats().unwrap()).unwrap();
    assert!(g.chunks(128).all(|row| row.iter().any(|&v| v != 0.0)));
}

#[test]
fn segmenter_gives_equal_rows_for_a_constant_cloud() {
    let model = Model::build(&ModelConfig::segmenter(3, 2), 14).unwrap();
    let cloud = PointCloud::new(vec![[0.1, -0.2, 0.3]; 64], vec![[0.0, 0.0, 1.0]; 64]).unwrap();
    let out = model.segment(&[&cloud]).unwrap();
    assert_eq!(out[0].len(), 64);
    assert!(out[0].iter().all(|row| row == &out[0][0]));
}

#[test]
fn invalid_configs_name_the_layer() {
    let mut cfg = ModelConfig::classifier(40, 2);
    cfg.backbone[1].mlps[0][1] = 33;
    let err = Model::build(&cfg, 0).unwrap_err().to_string();
    assert!(err.contains("bb2"), "{err}");

    let mut cfg = ModelConfig::classifier(40, 2);
    cfg.fcr[1].widths = vec![64, 70];
    let err = Model::build(&cfg, 0).unwrap_err().to_string();
    assert!(err.contains("fcr2"), "{err}");

    let mut cfg = ModelConfig::classifier(40, 2);
    cfg.fre[0].widths = vec![96, 94];
    let err = Model::build(&cfg, 0).unwrap_err().to_string();
    assert!(err.contains("fre1"), "{err}");

    let cfg = ModelConfig::classifier(40, 2);
    let back = ModelConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
}
