//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use marnet::pointops::{dist2, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Points on a coarse lattice, so distance ties are common.
pub fn lattice_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-3i32..=3) as f64 * 0.25,
                rng.gen_range(-3i32..=3) as f64 * 0.25,
                rng.gen_range(-3i32..=3) as f64 * 0.25,
            ]
        })
        .collect()
}

/// Sorts every source index by (squared distance, index) and keeps `k`.
pub fn naive_knn(src: &[Point], q: &Point, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = src.iter().enumerate().map(|(i, p)| (i, dist2(p, q))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Scans every source point; the in-ball indices in ascending order, padded
/// with the first one, or the nearest point when the ball is empty.
pub fn naive_ball(src: &[Point], c: &Point, r: f64, s: usize) -> (Vec<usize>, bool) {
    let inside: Vec<usize> = (0..src.len()).filter(|&i| dist2(&src[i], c) <= r * r).collect();
    if inside.is_empty() {
        let nearest = naive_knn(src, c, 1)[0].0;
        return (vec![nearest; s], true);
    }
    let mut m: Vec<usize> = inside.into_iter().take(s).collect();
    let first = m[0];
    m.resize(s, first);
    (m, false)
}

/// Checks that each pick after the first maximizes, over the points not yet
/// picked, the minimum distance to the earlier picks, ties going to the
/// lowest index.
pub fn is_greedy_fps(pts: &[Point], picks: &[usize]) -> bool {
    let mut taken = vec![false; pts.len()];
    taken[picks[0]] = true;
    for (step, &next) in picks.iter().enumerate().skip(1) {
        let score = |i: usize| {
            picks[..step]
                .iter()
                .map(|&j| dist2(&pts[i], &pts[j]))
                .fold(f64::INFINITY, f64::min)
        };
        let best = (0..pts.len())
            .filter(|&i| !taken[i])
            .fold(None::<(usize, f64)>, |b, i| {
                let d = score(i);
                if b.is_none_or(|(_, bd)| d > bd) {
                    Some((i, d))
                } else {
                    b
                }
            });
        if best.map(|b| b.0) != Some(next) {
            return false;
        }
        taken[next] = true;
    }
    true
}

use marnet::data::{synth_shapes, PointCloud};
use marnet::harness::generic_state;
use marnet::layers::{Ctx, Stage};
use marnet::model::{batch_points, Model, ModelConfig};
use marnet::tensor::Tape;

/// Expected `(stage, level, channels, points)` at 1024 input points.
pub fn classifier_shapes() -> Vec<(Stage, usize, usize, usize)> {
    encoder_shapes(&[64, 128, 256, 256], &[128, 64, 32], &[96, 288, 672])
}

pub fn lite_shapes() -> Vec<(Stage, usize, usize, usize)> {
    encoder_shapes(&[32, 64, 128, 256], &[128, 64, 32], &[64, 192, 448])
}

pub fn segmenter_shapes() -> Vec<(Stage, usize, usize, usize)> {
    let mut s = classifier_shapes();
    let fp = [(256, 32), (128, 128), (128, 512), (128, 1024)];
    s.extend(fp.iter().enumerate().map(|(i, &(c, n))| (Stage::Fp, i + 1, c, n)));
    s
}

fn encoder_shapes(bb: &[usize], fcr: &[usize], fre: &[usize]) -> Vec<(Stage, usize, usize, usize)> {
    let pts = [512, 128, 32, 1];
    let mut s: Vec<_> = bb.iter().zip(pts).enumerate().map(|(i, (&c, n))| (Stage::Bb, i + 1, c, n)).collect();
    s.extend(fcr.iter().zip([32, 128, 512]).enumerate().map(|(i, (&c, n))| (Stage::Fcr, i + 1, c, n)));
    s.extend(fre.iter().zip([128, 32, 1]).enumerate().map(|(i, (&c, n))| (Stage::Fre, i + 1, c, n)));
    s
}

pub fn shape_cloud(n: usize, seed: u64) -> PointCloud {
    synth_shapes(1, n, seed).unwrap().clouds.swap_remove(1)
}

pub fn permuted(cloud: &PointCloud, seed: u64) -> PointCloud {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    cloud.select(&perm)
}

/// Norm of the loss gradient with respect to the first backbone level's
/// features after zeroing every backbone, FCR and FRE parameter. The head
/// keeps random weights and randomized batch-norm state so that it passes
/// gradient at a zero input.
pub fn residual_path_gradient(config: &ModelConfig, seed: u64) -> f64 {
    let mut model = Model::build(config, seed).unwrap();
    generic_state(&mut model.params, &mut ChaCha8Rng::seed_from_u64(seed));
    for p in model.params.params_mut() {
        if ["bb", "fcr", "fre"].iter().any(|s| p.name.starts_with(s)) {
            p.value.data_mut().fill(0.0);
        }
    }
    let a = shape_cloud(256, seed);
    let b = shape_cloud(256, seed + 1);
    let mut tape = Tape::<f32>::new();
    let mut ctx = Ctx::eval();
    let trace = model.net.forward(&mut tape, &model.params, &mut ctx, batch_points(&[&a, &b]).unwrap()).unwrap();
    let loss = tape.softmax_cross_entropy(trace.logits, &[0, 1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    grads.norm(trace.find(Stage::Bb, 1).unwrap().feats().unwrap())
}
