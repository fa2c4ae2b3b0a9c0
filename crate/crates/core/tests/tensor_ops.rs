use marnet::tensor::{GradCheck, Mode, ParamStore, Tape, Tensor, Var};
use marnet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn grad_of(tape: &Tape<f64>, out: Var, x: Var) -> Vec<f64> {
    tape.backward(out).unwrap().get(x).unwrap().to_vec()
}

const SHAPES: [(usize, usize); 3] = [(4, 6), (8, 4), (12, 10)];

#[test]
fn grouped_linear_identity() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(random(&[5, 4], 1));
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 5] = 1.0;
    }
    let w = tape.constant(&[1, 4, 4], eye).unwrap();
    let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
    let y = tape.grouped_linear(x, w, Some(b), 1).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn grouped_linear_isolates_groups() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    // group 0 zero, group 1 all ones
    let w = tape.constant(&[2, 2, 2], vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let b = tape.constant(&[4], vec![0.5, -0.5, 1.0, 2.0]).unwrap();
    let y = tape.grouped_linear(x, w, Some(b), 2).unwrap();
    assert_eq!(tape.value(y), &[0.5, -0.5, 8.0, 9.0]);
}

#[test]
fn grouped_linear_equals_block_diagonal_dense() {
    let x = random(&[7, 6], 2);
    let w = random(&[2, 3, 8], 3);
    let b = random(&[16], 4);
    let mut dense = vec![0.0; 6 * 16];
    for g in 0..2 {
        for i in 0..3 {
            for o in 0..8 {
                dense[(g * 3 + i) * 16 + g * 8 + o] = w.data()[(g * 3 + i) * 8 + o];
            }
        }
    }
    let mut tape = Tape::<f64>::new();
    let xv = tape.input(x);
    let bv = tape.input(b);
    let wv = tape.input(w);
    let grouped = tape.grouped_linear(xv, wv, Some(bv), 2).unwrap();
    let dv = tape.constant(&[1, 6, 16], dense).unwrap();
    let full = tape.grouped_linear(xv, dv, Some(bv), 1).unwrap();
    assert_eq!(tape.value(grouped), tape.value(full));
}

#[test]
fn grouped_linear_rejects_indivisible_channels() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(random(&[2, 6], 5));
    let w = tape.input(random(&[4, 1, 2], 6));
    assert!(matches!(tape.grouped_linear(x, w, None, 4), Err(Error::Config { .. })));
}

#[test]
fn max_over_set_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
    let m = tape.max_over_set(x).unwrap();
    assert_eq!(tape.value(m), &[3.0, 5.0]);
    let row = tape.constant(&[1, 3], vec![-1.0, 0.5, 2.0]).unwrap();
    let m = tape.max_over_set(row).unwrap();
    assert_eq!(tape.value(m), &[-1.0, 0.5, 2.0]);
}

#[test]
fn max_over_set_ties_go_to_lowest_row() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::new(&[3, 1], vec![2.0, 2.0, 1.0]).unwrap().with_requires_grad(true));
    let m = tape.max_over_set(x).unwrap();
    assert_eq!(grad_of(&tape, m, x), vec![1.0, 0.0, 0.0]);
}

#[test]
fn max_over_set_gradient() {
    let r = GradCheck::default().inputs(&[random(&[4, 3], 7)], |t, v| t.max_over_set(v[0]));
    assert!(r.pass && r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn empty_set_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(random(&[4, 3], 8));
    assert!(tape.group_max(x, 0).is_err());
    assert!(tape.group_max(x, 3).is_err());
}

fn bn(tape: &mut Tape<f64>, store: &ParamStore<f64>, x: Var, gamma: Var, beta: Var, mode: Mode) -> marnet::Result<Var> {
    let stats = marnet::tensor::StatsId(0);
    tape.batch_norm(x, gamma, beta, stats, store, mode, 1e-5)
}

fn bn_store(width: usize) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add_stats("bn", width).unwrap();
    s
}

#[test]
fn batch_norm_of_constant_channels_is_beta() {
    let store = bn_store(2);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[4, 2], vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0, 3.0, -1.0]).unwrap();
    let g = tape.constant(&[2], vec![1.3, 0.7]).unwrap();
    let b = tape.constant(&[2], vec![0.25, -2.0]).unwrap();
    let y = bn(&mut tape, &store, x, g, b, Mode::Train).unwrap();
    for row in tape.value(y).chunks(2) {
        assert!((row[0] - 0.25).abs() < 1e-3 && (row[1] + 2.0).abs() < 1e-3);
    }
}

#[test]
fn batch_norm_leaves_standardized_input() {
    let store = bn_store(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
    let g = tape.constant(&[1], vec![1.0]).unwrap();
    let b = tape.constant(&[1], vec![0.0]).unwrap();
    let y = bn(&mut tape, &store, x, g, b, Mode::Train).unwrap();
    for (a, e) in tape.value(y).iter().zip([-1.0, 1.0, -1.0, 1.0]) {
        assert!((a - e).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_needs_two_rows_in_training() {
    let store = bn_store(3);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(random(&[1, 3], 9));
    let g = tape.constant(&[3], vec![1.0; 3]).unwrap();
    let b = tape.constant(&[3], vec![0.0; 3]).unwrap();
    assert!(bn(&mut tape, &store, x, g, b, Mode::Train).is_err());
    assert!(bn(&mut tape, &store, x, g, b, Mode::Eval).is_ok());
}

#[test]
fn batch_norm_updates_running_statistics() {
    let mut store = bn_store(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[2, 1], vec![1.0, 3.0]).unwrap();
    let g = tape.constant(&[1], vec![1.0]).unwrap();
    let b = tape.constant(&[1], vec![0.0]).unwrap();
    bn(&mut tape, &store, x, g, b, Mode::Train).unwrap();
    tape.apply_bn_updates(&mut store, 0.1);
    let s = &store.all_stats()[0];
    assert!((s.mean[0] - 0.2).abs() < 1e-12);
    // unbiased batch variance 2, running 0.9 * 1 + 0.1 * 2
    assert!((s.var[0] - 1.1).abs() < 1e-12);
}

#[test]
fn batch_norm_gradient() {
    let store = bn_store(5);
    for mode in [Mode::Train, Mode::Eval] {
        let r = GradCheck::default().inputs(&[random(&[6, 5], 10), random(&[5], 11), random(&[5], 12)], |t, v| {
            bn(t, &store, v[0], v[1], v[2], mode)
        });
        assert!(r.pass, "{mode:?}: {r:?}");
    }
}

#[test]
fn dropout_identities_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(random(&[10, 10], 13));
    let same = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(tape.value(same), tape.value(x));
    let eval = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(tape.value(eval), tape.value(x));
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_keep_rate_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&[1000, 100], vec![1.0; 100_000]).unwrap();
    let p = 0.3;
    let y = tape.dropout(x, p, Mode::Train, &mut rng).unwrap();
    let kept: Vec<f64> = tape.value(y).iter().copied().filter(|&v| v != 0.0).collect();
    let rate = kept.len() as f64 / 1e5;
    assert!((rate - (1.0 - p)).abs() < 0.01, "keep rate {rate}");
    assert!(kept.iter().all(|&v| (v - 1.0 / (1.0 - p)).abs() < 1e-12));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(&[2, 4], vec![0.3; 8]).unwrap();
    let l = tape.softmax_cross_entropy(z, &[0, 3]).unwrap();
    assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-12);
    let z = tape.constant(&[1, 3], vec![0.0, 200.0, 0.0]).unwrap();
    let l = tape.softmax_cross_entropy(z, &[1]).unwrap();
    assert!(tape.scalar(l) < 1e-12);
    assert!(tape.softmax_cross_entropy(z, &[3]).is_err());
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = random(&[3, 4], 14);
    let targets = [2usize, 0, 3];
    let mut tape = Tape::<f64>::new();
    let z = tape.input(logits.clone().with_requires_grad(true));
    let l = tape.softmax_cross_entropy(z, &targets).unwrap();
    let g = grad_of(&tape, l, z);
    for (i, row) in logits.data().chunks(4).enumerate() {
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..4 {
            let want = (e[j] / s - if j == targets[i] { 1.0 } else { 0.0 }) / 3.0;
            assert!((g[i * 4 + j] - want).abs() < 1e-15);
        }
    }
    let r = GradCheck::default().inputs(&[logits], |t, v| t.softmax_cross_entropy(v[0], &targets));
    assert!(r.pass && r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn reduction_examples() {
    let mut tape = Tape::<f64>::new();
    let f = tape.input(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_requires_grad(true));
    let r = tape.reduction(f, 2).unwrap();
    assert_eq!(tape.value(r), &[3.0, 7.0]);
    let id = tape.reduction(f, 1).unwrap();
    assert_eq!(tape.value(id), tape.value(f));
    let probe = tape.dot(r, vec![0.25, -1.5]).unwrap();
    assert_eq!(grad_of(&tape, probe, f), vec![0.25, 0.25, -1.5, -1.5]);
    assert!(matches!(tape.reduction(f, 3), Err(Error::Config { .. })));
}

#[test]
fn concat_backward_splits_at_channel_boundaries() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(random(&[3, 2], 15).with_requires_grad(true));
    let b = tape.input(random(&[3, 5], 16).with_requires_grad(true));
    let c = tape.concat_channels(&[a, b]).unwrap();
    let w: Vec<f64> = (0..21).map(|i| i as f64 * 0.5 - 3.0).collect();
    let out = tape.dot(c, w.clone()).unwrap();
    let g = tape.backward(out).unwrap();
    let (ga, gb) = (g.get(a).unwrap(), g.get(b).unwrap());
    for r in 0..3 {
        assert_eq!(&ga[r * 2..r * 2 + 2], &w[r * 7..r * 7 + 2]);
        assert_eq!(&gb[r * 5..r * 5 + 5], &w[r * 7 + 2..r * 7 + 7]);
    }
    let total: f64 = ga.iter().chain(gb).sum();
    assert_eq!(total, w.iter().sum::<f64>());
}

#[test]
fn leaf_used_twice_accumulates() {
    let x = random(&[4, 3], 17).with_requires_grad(true);
    let w = random(&[1, 3, 2], 18);
    let w2: Vec<f64> = w.data().iter().map(|v| 2.0 * v).collect();

    let mut tape = Tape::<f64>::new();
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone());
    let y1 = tape.grouped_linear(xv, wv, None, 1).unwrap();
    let y2 = tape.grouped_linear(xv, wv, None, 1).unwrap();
    let y = tape.add(y1, y2).unwrap();
    let s = tape.sum(y).unwrap();
    let twice = grad_of(&tape, s, xv);

    let mut tape = Tape::<f64>::new();
    let xv = tape.input(x);
    let wv = tape.constant(&[1, 3, 2], w2).unwrap();
    let y = tape.grouped_linear(xv, wv, None, 1).unwrap();
    let s = tape.sum(y).unwrap();
    assert_eq!(twice, grad_of(&tape, s, xv));
}

#[test]
fn every_op_matches_finite_differences_on_three_shapes() {
    let check = GradCheck::default();
    for (i, &(n, d)) in SHAPES.iter().enumerate() {
        let seed = 100 * i as u64;
        let x = random(&[n, d], seed);
        let y = random(&[n, d], seed + 1);
        let mut cases: Vec<(&str, marnet::tensor::GradReport)> = Vec::new();
        cases.push(("relu", check.inputs(&[x.clone()], |t, v| t.relu(v[0]))));
        cases.push(("add", check.inputs(&[x.clone(), y.clone()], |t, v| t.add(v[0], v[1]))));
        cases.push(("concat", check.inputs(&[x.clone(), y.clone()], |t, v| t.concat_channels(&[v[0], v[1]]))));
        cases.push((
            "grouped_linear",
            check.inputs(&[x.clone(), random(&[2, d / 2, 4], seed + 2), random(&[8], seed + 3)], |t, v| {
                t.grouped_linear(v[0], v[1], Some(v[2]), 2)
            }),
        ));
        let idx: Vec<u32> = (0..2 * n as u32).map(|j| (j * 7 + 3) % n as u32).collect();
        cases.push(("gather_rows", check.inputs(&[x.clone()], |t, v| t.gather_rows(v[0], idx.clone()))));
        cases.push(("group_max", check.inputs(&[x.clone()], |t, v| t.group_max(v[0], 2))));
        cases.push(("group_mean", check.inputs(&[x.clone()], |t, v| t.group_mean(v[0], 2))));
        cases.push(("mean_over_set", check.inputs(&[x.clone()], |t, v| t.mean_over_set(v[0]))));
        cases.push(("reduction", check.inputs(&[x.clone()], |t, v| t.reduction(v[0], 2))));
        let w: Vec<f64> = (0..3 * n).map(|j| 0.1 + (j % 5) as f64 * 0.2).collect();
        let nn: Vec<u32> = (0..3 * n as u32).map(|j| (j * 5 + 1) % n as u32).collect();
        cases.push(("interpolate", check.inputs(&[x.clone()], |t, v| t.interpolate(v[0], nn.clone(), w.clone(), 3))));
        let targets: Vec<usize> = (0..n).map(|j| j % d).collect();
        cases.push(("cross_entropy", check.inputs(&[x.clone()], |t, v| t.softmax_cross_entropy(v[0], &targets))));
        cases.push(("mean", check.inputs(&[x.clone()], |t, v| t.mean(v[0]))));
        let store = bn_store(d);
        cases.push((
            "batch_norm",
            check.inputs(&[x.clone(), random(&[d], seed + 4), random(&[d], seed + 5)], |t, v| {
                bn(t, &store, v[0], v[1], v[2], Mode::Train)
            }),
        ));
        for (name, r) in cases {
            assert!(r.pass && r.max_rel_err < 1e-5, "{name} on {n}x{d}: {r:?}");
        }
    }
}

#[test]
fn gradcheck_of_a_linear_map_is_exact() {
    let r = GradCheck::default().inputs(&[random(&[3, 4], 19), random(&[1, 4, 2], 20)], |t, v| {
        t.grouped_linear(v[0], v[1], None, 1)
    });
    assert!(r.max_rel_err < 1e-9, "{r:?}");
}

#[test]
fn gradcheck_passes_relu_away_from_zero() {
    let mut x = random(&[5, 5], 21);
    for v in x.data_mut() {
        *v += v.signum() * 0.1;
    }
    assert!(GradCheck::default().inputs(&[x], |t, v| t.relu(v[0])).pass);
}

#[test]
fn gradcheck_catches_a_wrong_gradient() {
    // dot(x, x) with the second operand recorded as a constant: the value is
    // |x|^2 but the tape reports x instead of 2x
    let r = GradCheck::default().inputs(&[random(&[1, 4], 22)], |t, v| {
        let cur = t.value(v[0]).to_vec();
        t.dot(v[0], cur)
    });
    assert!(!r.pass, "{r:?}");
}

#[test]
fn gradcheck_validates_epsilon_and_reports_non_finite() {
    assert!(GradCheck::new(1e-3, 1e-5).is_err());
    assert!(GradCheck::new(1e-8, 1e-5).is_err());
    assert!(GradCheck::new(1e-6, 1e-5).is_ok());
    let x = Tensor::new(&[1, 2], vec![1e300, 1e300]).unwrap();
    let r = GradCheck::default().inputs(&[x], |t, v| t.grouped_linear(v[0], v[0], None, 1));
    assert!(!r.pass);
}

#[test]
fn identical_inputs_give_identical_results() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f32>::new();
        let x = tape.input(random(&[16, 8], 23).cast::<f32>().with_requires_grad(true));
        let w = tape.input(random(&[2, 4, 6], 24).cast::<f32>().with_requires_grad(true));
        let h = tape.grouped_linear(x, w, None, 2).unwrap();
        let h = tape.relu(h).unwrap();
        let h = tape.dropout(h, 0.4, Mode::Train, &mut rng).unwrap();
        let m = tape.group_max(h, 4).unwrap();
        let l = tape.softmax_cross_entropy(m, &[0, 1, 2, 3]).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).to_vec(), g.get(x).unwrap().to_vec(), g.get(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn tensor_shape_invariants() {
    assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    let mut t = Tensor::<f64>::new(&[2, 2], vec![1.0; 4]).unwrap();
    assert!(t.accumulate_grad(&[1.0; 3]).is_err());
    t.accumulate_grad(&[1.0; 4]).unwrap();
    t.accumulate_grad(&[0.5; 4]).unwrap();
    assert_eq!(t.grad().unwrap(), &[1.5; 4]);
}

proptest! {
    #[test]
    fn reduction_is_linear(
        a in proptest::collection::vec(-100i32..100, 12),
        b in proptest::collection::vec(-100i32..100, 12),
        alpha in -8i32..8,
        beta in -8i32..8,
        k in prop::sample::select(vec![1usize, 2, 3, 4, 6]),
    ) {
        // integer-valued inputs keep every sum exact
        let f = |v: &[f64]| {
            let mut t = Tape::<f64>::new();
            let x = t.constant(&[1, 12], v.to_vec()).unwrap();
            let r = t.reduction(x, k).unwrap();
            t.value(r).to_vec()
        };
        let (a, b): (Vec<f64>, Vec<f64>) = (a.iter().map(|&v| v as f64).collect(), b.iter().map(|&v| v as f64).collect());
        let (al, be) = (alpha as f64, beta as f64);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| al * x + be * y).collect();
        let want: Vec<f64> = f(&a).iter().zip(f(&b)).map(|(x, y)| al * x + be * y).collect();
        prop_assert_eq!(f(&mix), want);
    }

    #[test]
    fn max_over_set_dominates_every_row(rows in 1usize..10, cols in 1usize..6, seed in any::<u64>()) {
        let x = random(&[rows, cols], seed);
        let mut t = Tape::<f64>::new();
        let v = t.input(x.clone());
        let m = t.max_over_set(v).unwrap();
        let m = t.value(m).to_vec();
        for row in x.data().chunks(cols) {
            for (a, b) in row.iter().zip(&m) {
                prop_assert!(a <= b);
            }
        }
        for (j, mj) in m.iter().enumerate() {
            prop_assert!(x.data().chunks(cols).any(|r| r[j] == *mj));
        }
    }
}
