//! 64-bit finite-difference checks of every layer type and the full models.

use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::normalize3;
use crate::error::{Error, Result};
use crate::layers::{
    Ctx, FcrLevel, FeaturePropagation, FreLevel, FullyConnected, GroupSpec, LevelState, PointSet, SetAbstraction,
    SharedMlp, Stage,
};
use crate::model::{ModelConfig, Net};
use crate::tensor::{GradCheck, GradReport, Mode, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSuiteConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Points per cloud of the coarsest input level; at least 8.
    pub points: usize,
    /// Elements checked per parameter tensor of the full models.
    pub model_samples: usize,
    pub seed: u64,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        GradSuiteConfig {
            epsilon: 1e-5,
            tolerance: 1e-5,
            points: 8,
            model_samples: 2,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub pass: bool,
    pub seconds: f64,
}

impl GradCase {
    fn new(name: &str, r: GradReport, started: Instant) -> Self {
        GradCase {
            name: name.into(),
            max_rel_err: r.max_rel_err,
            worst: r.worst,
            worst_values: r.worst_values,
            checked: r.checked,
            pass: r.pass,
            seconds: started.elapsed().as_secs_f64(),
        }
    }
}

/// Two clouds of `n` random points in the unit cube with random unit normals.
pub fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Rc<PointSet> {
    let batch = 2;
    let mut pos = Vec::with_capacity(batch * n);
    let mut nrm = Vec::with_capacity(batch * n);
    for _ in 0..batch * n {
        pos.push([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        nrm.push(normalize3([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]));
    }
    Rc::new(PointSet::new(batch, n, pos, nrm).expect("consistent sizes"))
}

fn add_input(store: &mut ParamStore<f32>, name: &str, rows: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<ParamId> {
    let data = (0..rows * width).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    store.add(name, Tensor::new(&[rows, width], data)?)
}

fn level(stage: Stage, points: &Rc<PointSet>, feats: Var, width: usize) -> LevelState {
    LevelState {
        stage,
        level: 1,
        points: Rc::clone(points),
        feats: Some(feats),
        width,
    }
}

fn train_ctx() -> Ctx {
    Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(7))
}

fn check(
    check: &GradCheck,
    store: &ParamStore<f32>,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> GradReport {
    let mut s64 = store.cast::<f64>();
    check.params(&mut s64, f)
}

/// Every layer type at small widths, batch-norm in training mode, gradients
/// taken with respect to parameters and input features alike.
pub fn layer_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    if cfg.points < 8 {
        return Err(Error::InvalidArgument("gradient checks need at least 8 points".into()));
    }
    let gc = GradCheck::new(cfg.epsilon, cfg.tolerance)?.with_seed(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.points;
    let fine = random_points(2 * n, &mut rng);
    let coarse = random_points(n, &mut rng);
    let mut out = Vec::new();

    // Grouped shared MLP with residuals.
    {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let x = add_input(&mut s, "input", 2 * n, 8, &mut rng)?;
        let mlp = SharedMlp::new(&mut s, "mlp", 8, &[8, 8], 2, true, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let xv = tape.param(st, x);
            mlp.forward(tape, st, &mut train_ctx(), xv)
        });
        out.push(GradCase::new("shared_mlp", r, t));
    }
    // Fully connected head with dropout.
    {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let x = add_input(&mut s, "input", n, 8, &mut rng)?;
        let fc = FullyConnected::new(&mut s, "fc", 8, &[(8, 0.5)], 3, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let xv = tape.param(st, x);
            fc.forward(tape, st, &mut train_ctx(), xv)
        });
        out.push(GradCase::new("fully_connected", r, t));
    }
    // Multi-scale set abstraction and the global variant.
    {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let x = add_input(&mut s, "input", 2 * 2 * n, 4, &mut rng)?;
        let sa = SetAbstraction::new(&mut s, "sa", 4, &[0.5, 1.0], &[4, 8], &[vec![4, 4], vec![8, 8]], 2, true, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let xv = tape.param(st, x);
            let input = level(Stage::Bb, &fine, xv, 4);
            Ok(sa.forward(tape, st, &mut train_ctx(), &input, n, 2)?.feats()?)
        });
        out.push(GradCase::new("set_abstraction", r, t));

        let t = Instant::now();
        let mut s = ParamStore::new();
        let x = add_input(&mut s, "input", 2 * n, 8, &mut rng)?;
        let sa = SetAbstraction::new(&mut s, "sa", 8, &[], &[], &[vec![8]], 2, true, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let xv = tape.param(st, x);
            let input = level(Stage::Bb, &coarse, xv, 8);
            Ok(sa.forward(tape, st, &mut train_ctx(), &input, 1, 3)?.feats()?)
        });
        out.push(GradCase::new("set_abstraction_global", r, t));
    }
    // Cross-referencing: first level (backbone only) and a later one.
    {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let bb = add_input(&mut s, "input.bb", 2 * n, 16, &mut rng)?;
        let fcr = FcrLevel::new(&mut s, "fcr1", 0, 16, &[8, 8], 2, true, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let b = tape.param(st, bb);
            let bl = level(Stage::Bb, &coarse, b, 16);
            Ok(fcr.forward(tape, st, &mut train_ctx(), None, &bl, &fine, 1)?.feats()?)
        });
        out.push(GradCase::new("fcr_first", r, t));

        let t = Instant::now();
        let mut s = ParamStore::new();
        let prev = add_input(&mut s, "input.fcr", 2 * n, 8, &mut rng)?;
        let bb = add_input(&mut s, "input.bb", 2 * n, 8, &mut rng)?;
        let fcr = FcrLevel::new(&mut s, "fcr2", 8, 8, &[8, 8], 2, true, &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let p = tape.param(st, prev);
            let b = tape.param(st, bb);
            let pl = level(Stage::Fcr, &coarse, p, 8);
            let bl = level(Stage::Bb, &coarse, b, 8);
            Ok(fcr.forward(tape, st, &mut train_ctx(), Some(&pl), &bl, &fine, 2)?.feats()?)
        });
        out.push(GradCase::new("fcr", r, t));
    }
    // Re-encoding with local and global downsampling.
    for (name, radius) in [("fre", Some(1.0)), ("fre_global", None)] {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let prev = add_input(&mut s, "input.fre", 2 * 2 * n, 4, &mut rng)?;
        let fcr = add_input(&mut s, "input.fcr", 2 * 2 * n, 4, &mut rng)?;
        let bb = add_input(&mut s, "input.bb", 2 * 2 * n, 8, &mut rng)?;
        let group = GroupSpec { radius, samples: 4 };
        let fre = FreLevel::new(&mut s, name, &[4, 4, 8], &[16, 16], group, 2, true, &mut rng)?;
        let centers = radius.map(|_| Rc::clone(&coarse));
        let r = check(&gc, &s, |tape, st| {
            let ins = [
                level(Stage::Fre, &fine, tape.param(st, prev), 4),
                level(Stage::Fcr, &fine, tape.param(st, fcr), 4),
                level(Stage::Bb, &fine, tape.param(st, bb), 8),
            ];
            let refs: Vec<&LevelState> = ins.iter().collect();
            Ok(fre.forward(tape, st, &mut train_ctx(), &refs, centers.as_ref(), 2)?.feats()?)
        });
        out.push(GradCase::new(name, r, t));
    }
    // Feature propagation.
    {
        let t = Instant::now();
        let mut s = ParamStore::new();
        let c = add_input(&mut s, "input.coarse", 2 * n, 8, &mut rng)?;
        let f = add_input(&mut s, "input.fine", 2 * 2 * n, 4, &mut rng)?;
        let fp = FeaturePropagation::new(&mut s, "fp", 8, 4, &[8, 8], &mut rng)?;
        let r = check(&gc, &s, |tape, st| {
            let cl = level(Stage::Fre, &coarse, tape.param(st, c), 8);
            let fl = level(Stage::Fre, &fine, tape.param(st, f), 4);
            Ok(fp.forward(tape, st, &mut train_ctx(), &cl, &fl, 1)?.feats()?)
        });
        out.push(GradCase::new("feature_propagation", r, t));
    }
    Ok(out)
}

/// Randomizes batch-norm statistics, scales and shifts. A fresh network has
/// zero shifts and zero running means, which puts all-zero rows exactly on
/// ReLU kinks.
pub fn generic_state(store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
    for s in store.all_stats_mut() {
        s.mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.2..0.2));
        s.var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
    }
    for p in store.params_mut() {
        if p.name.ends_with(".bn.beta") {
            p.value.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
        } else if p.name.ends_with(".bn.gamma") {
            p.value.data_mut().iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
        }
    }
}

/// A full network at its published widths on two clouds of `cfg.points`
/// points, sampling `cfg.model_samples` elements of every parameter tensor.
/// Batch-norm statistics and affine terms are randomized to move away from
/// the initialization's kinks, and batch norm uses running statistics: batch statistics over a handful
/// of near-duplicate grouped rows are too ill-conditioned for finite
/// differences, and [`layer_cases`] covers them.
pub fn model_case(name: &str, config: &ModelConfig, cfg: &GradSuiteConfig) -> Result<GradCase> {
    let t = Instant::now();
    let gc = GradCheck::new(cfg.epsilon, cfg.tolerance)?
        .with_seed(cfg.seed)
        .with_sampling(cfg.model_samples);
    let mut store = ParamStore::new();
    let net = Net::build(config, &mut store, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf00d);
    generic_state(&mut store, &mut rng);
    let pts = random_points(cfg.points, &mut rng);
    let r = check(&gc, &store, |tape, st| {
        Ok(net.forward(tape, st, &mut Ctx::eval(), Rc::clone(&pts))?.logits)
    });
    Ok(GradCase::new(name, r, t))
}

/// The classifier and the part segmenter.
pub fn model_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    Ok(vec![
        model_case("classifier", &ModelConfig::classifier(4, 2), cfg)?,
        model_case("segmenter", &ModelConfig::segmenter(2, 2), cfg)?,
    ])
}

pub fn run_suite(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    let mut cases = layer_cases(cfg)?;
    cases.extend(model_cases(cfg)?);
    Ok(cases)
}
