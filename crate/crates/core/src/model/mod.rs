//! Network assembly, end-to-end forward passes and complexity accounting.

mod config;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{FcSpec, FcrSpec, FpSpec, FreSpec, ModelConfig, SaSpec, Task};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::layers::{
    geometry_features, Ctx, FcrLevel, FeaturePropagation, FreLevel, FullyConnected, GroupSpec, LevelState,
    PointSet, SetAbstraction, Stage,
};
use crate::tensor::{Float, Mode, ParamStore, Tape, Var};

/// Layer structure of a built model. Holds parameter handles, not values, so
/// the same network runs against a 32-bit store for training or a 64-bit
/// copy for gradient checks.
#[derive(Debug, Clone)]
pub struct Net {
    pub config: ModelConfig,
    pub backbone: Vec<SetAbstraction>,
    pub fcr: Vec<FcrLevel>,
    pub fre: Vec<FreLevel>,
    pub fp: Vec<FeaturePropagation>,
    pub head: FullyConnected,
}

/// A network plus its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Net,
    pub params: ParamStore<f32>,
}

/// Every level produced by one forward pass, in execution order, and the
/// output logits (`[B, classes]` or `[B·N, parts]`).
pub struct Trace {
    pub states: Vec<LevelState>,
    pub logits: Var,
}

impl Trace {
    /// `(stage, level, channels, points)` of every recorded level.
    pub fn shapes(&self) -> Vec<(Stage, usize, usize, usize)> {
        self.states
            .iter()
            .map(|s| (s.stage, s.level, s.width, s.points.n))
            .collect()
    }

    pub fn find(&self, stage: Stage, level: usize) -> Option<&LevelState> {
        self.states.iter().find(|s| s.stage == stage && s.level == level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: usize,
    pub flops: u64,
    pub channels: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub model: String,
    pub input_points: usize,
    pub parameters: usize,
    pub flops: u64,
    pub convention: &'static str,
    pub layers: Vec<LayerCost>,
}

pub const FLOP_CONVENTION: &str = "one multiply-accumulate in a linear or grouped-linear layer = 2 FLOPs; \
     each max-pooling comparison, residual or reduction addition = 1; interpolation = 2 per weight and \
     channel; batch norm, ReLU, dropout and neighbor search are not counted";

impl Net {
    pub fn build(config: &ModelConfig, store: &mut ParamStore<f32>, seed: u64) -> Result<Self> {
        let c = config;
        let l = c.backbone.len();
        if l < 2 {
            return Err(Error::config("model", "at least two backbone levels are required"));
        }
        if c.n_outputs == 0 {
            return Err(Error::config("model", "n_outputs must be positive"));
        }
        if !c.backbone_only && (c.fcr.len() != l - 1 || c.fre.len() != l - 1) {
            return Err(Error::config(
                "model",
                format!(
                    "{l} backbone levels need {} FCR and FRE levels, got {} and {}",
                    l - 1,
                    c.fcr.len(),
                    c.fre.len()
                ),
            ));
        }
        if !c.backbone.last().is_some_and(|s| s.radii.is_empty()) {
            return Err(Error::config(format!("bb{l}"), "the last backbone level must pool globally"));
        }
        if let Some(j) = c.backbone[..l - 1].iter().position(|s| s.radii.is_empty()) {
            return Err(Error::config(format!("bb{}", j + 1), "only the last backbone level may pool globally"));
        }
        match c.task {
            Task::Classification if !c.fp.is_empty() => {
                return Err(Error::config("fp", "classification models take no propagation levels"))
            }
            Task::PartSegmentation if c.fp.len() != l || c.backbone_only => {
                return Err(Error::config(
                    "fp",
                    format!("segmentation needs {l} propagation levels and the full encoder"),
                ))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = c.n_groups;

        let mut backbone = Vec::with_capacity(l);
        let mut bb_width = Vec::with_capacity(l);
        let mut width = 0;
        for (j, s) in c.backbone.iter().enumerate() {
            let sa = SetAbstraction::new(
                store,
                &format!("bb{}", j + 1),
                width,
                &s.radii,
                &s.samples,
                &s.mlps,
                g,
                c.residual,
                &mut rng,
            )?;
            width = sa.c_out();
            bb_width.push(width);
            backbone.push(sa);
        }

        let mut fcr = Vec::new();
        let mut fre = Vec::new();
        let mut head_in = width;
        if !c.backbone_only {
            let mut c_fcr = 0;
            let mut fcr_width = Vec::with_capacity(l - 1);
            for (i, s) in c.fcr.iter().enumerate() {
                let lvl = FcrLevel::new(
                    store,
                    &format!("fcr{}", i + 1),
                    c_fcr,
                    bb_width[l - 1 - i],
                    &s.widths,
                    g,
                    c.residual,
                    &mut rng,
                )?;
                c_fcr = lvl.c_out();
                fcr_width.push(c_fcr);
                fcr.push(lvl);
            }
            let mut c_fre = 0;
            for (j, s) in c.fre.iter().enumerate() {
                let mut ins = Vec::with_capacity(3);
                if j > 0 {
                    ins.push(c_fre);
                }
                ins.push(fcr_width[l - 2 - j]);
                ins.push(bb_width[j]);
                let name = format!("fre{}", j + 1);
                let last = j + 2 == l;
                if last != s.radius.is_none() {
                    return Err(Error::config(name, "exactly the last FRE level pools globally"));
                }
                let group = GroupSpec {
                    radius: s.radius,
                    samples: s.samples,
                };
                let lvl = FreLevel::new(store, &name, &ins, &s.widths, group, g, c.residual, &mut rng)?;
                c_fre = lvl.c_out();
                fre.push(lvl);
            }
            head_in = c_fre;
        }

        let mut fp = Vec::new();
        if c.task == Task::PartSegmentation {
            // Skips: FRE outputs from the deepest non-global one down, then
            // the last FCR level, then the raw geometry.
            let mut skips: Vec<usize> = fre[..l - 2].iter().rev().map(FreLevel::c_out).collect();
            skips.push(fcr[l - 2].c_out());
            skips.push(6);
            let mut coarse = head_in;
            for (i, (s, skip)) in c.fp.iter().zip(skips).enumerate() {
                let lvl = FeaturePropagation::new(store, &format!("fp{}", i + 1), coarse, skip, &s.widths, &mut rng)?;
                coarse = lvl.c_out();
                fp.push(lvl);
            }
            head_in = coarse;
        }

        let hidden: Vec<(usize, f64)> = c.head.iter().map(|h| (h.width, h.dropout)).collect();
        let head = FullyConnected::new(store, "fc", head_in, &hidden, c.n_outputs, &mut rng)?;
        Ok(Net {
            config: c.clone(),
            backbone,
            fcr,
            fre,
            fp,
            head,
        })
    }

    pub fn levels(&self) -> usize {
        self.backbone.len()
    }

    /// Runs the encoder (and decoder for segmentation) on a batch.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        points: Rc<PointSet>,
    ) -> Result<Trace> {
        let l = self.levels();
        let plan = self.config.point_plan(points.n);
        let input = LevelState::input(Rc::clone(&points));
        let mut states = Vec::new();

        let mut bb: Vec<LevelState> = Vec::with_capacity(l);
        for (j, sa) in self.backbone.iter().enumerate() {
            let src = if j == 0 { &input } else { &bb[j - 1] };
            let out = sa.forward(tape, store, ctx, src, plan[j], j + 1)?;
            bb.push(out);
        }
        states.extend(bb.iter().cloned());

        if self.config.backbone_only {
            let logits = self.head.forward(tape, store, ctx, bb[l - 1].feats()?)?;
            return Ok(Trace { states, logits });
        }

        let mut fcr: Vec<LevelState> = Vec::with_capacity(l - 1);
        for (i, lvl) in self.fcr.iter().enumerate() {
            let prev = fcr.last();
            let out = lvl.forward(tape, store, ctx, prev, &bb[l - 1 - i], &bb[l - 2 - i].points, i + 1)?;
            fcr.push(out);
        }
        states.extend(fcr.iter().cloned());

        let mut fre: Vec<LevelState> = Vec::with_capacity(l - 1);
        for (j, lvl) in self.fre.iter().enumerate() {
            let mut ins: Vec<&LevelState> = Vec::with_capacity(3);
            if j > 0 {
                ins.push(&fre[j - 1]);
            }
            ins.push(&fcr[l - 2 - j]);
            ins.push(&bb[j]);
            let centers = bb.get(j + 1).map(|s| &s.points);
            let out = lvl.forward(tape, store, ctx, &ins, centers, j + 1)?;
            fre.push(out);
        }
        states.extend(fre.iter().cloned());

        let mut top = fre[l - 2].clone();
        if !self.fp.is_empty() {
            let raw = LevelState {
                feats: Some(geometry_features(tape, &points)?),
                width: 6,
                ..input
            };
            let mut skips: Vec<&LevelState> = fre[..l - 2].iter().rev().collect();
            skips.push(&fcr[l - 2]);
            skips.push(&raw);
            for (i, (lvl, skip)) in self.fp.iter().zip(skips).enumerate() {
                top = lvl.forward(tape, store, ctx, &top, skip, i + 1)?;
                states.push(top.clone());
            }
        }
        let logits = self.head.forward(tape, store, ctx, top.feats()?)?;
        Ok(Trace { states, logits })
    }

    /// Parameter and FLOP counts for one cloud of `n` points.
    pub fn complexity(&self, n: usize) -> ComplexityReport {
        let l = self.levels();
        let plan = self.config.point_plan(n);
        let mut layers = Vec::new();
        let mut src = n;
        for (j, sa) in self.backbone.iter().enumerate() {
            layers.push(LayerCost {
                name: sa.name.clone(),
                params: sa.num_params(),
                flops: sa.flops(plan[j], src),
                channels: sa.c_out(),
                points: plan[j],
            });
            src = plan[j];
        }
        let mut head_rows = 1;
        if !self.config.backbone_only {
            for (i, f) in self.fcr.iter().enumerate() {
                let here = plan[l - 1 - i];
                let next = plan[l - 2 - i];
                layers.push(LayerCost {
                    name: f.name.clone(),
                    params: f.num_params(),
                    flops: f.flops(here, next, here),
                    channels: f.c_out(),
                    points: next,
                });
            }
            for (j, f) in self.fre.iter().enumerate() {
                let m = plan.get(j + 1).copied().filter(|_| j + 2 < l).unwrap_or(1);
                layers.push(LayerCost {
                    name: f.name.clone(),
                    params: f.num_params(),
                    flops: f.flops(plan[j], m),
                    channels: f.c_out(),
                    points: m,
                });
            }
            let mut coarse = 1;
            let mut fine_points: Vec<usize> = (1..l - 1).rev().map(|j| plan[j]).collect();
            fine_points.push(plan[0]);
            fine_points.push(n);
            for (f, fine) in self.fp.iter().zip(fine_points) {
                layers.push(LayerCost {
                    name: f.name.clone(),
                    params: f.num_params(),
                    flops: f.flops(fine, coarse),
                    channels: f.c_out(),
                    points: fine,
                });
                coarse = fine;
                head_rows = fine;
            }
        }
        let mut c = 0;
        for layer in &self.head.layers {
            c = layer.c_out;
            layers.push(LayerCost {
                name: layer.name.clone(),
                params: layer.num_params(),
                flops: layer.flops(head_rows),
                channels: c,
                points: head_rows,
            });
        }
        debug_assert_eq!(c, self.config.n_outputs);
        ComplexityReport {
            model: self.config.name.clone(),
            input_points: n,
            parameters: layers.iter().map(|x| x.params).sum(),
            flops: layers.iter().map(|x| x.flops).sum(),
            convention: FLOP_CONVENTION,
            layers,
        }
    }
}

/// Stacks equally sized clouds into one batch.
pub fn batch_points(clouds: &[&PointCloud]) -> Result<Rc<PointSet>> {
    let n = clouds.first().map(|c| c.len()).ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    if let Some(c) = clouds.iter().find(|c| c.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "clouds in a batch must share a size: {n} vs {}",
            c.len()
        )));
    }
    let positions = clouds.iter().flat_map(|c| c.positions.iter().copied()).collect();
    let normals = clouds.iter().flat_map(|c| c.normals.iter().copied()).collect();
    Ok(Rc::new(PointSet::new(clouds.len(), n, positions, normals)?))
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Net::build(config, &mut params, seed)?;
        Ok(Model { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn complexity(&self) -> ComplexityReport {
        self.net.complexity(self.net.config.input_points)
    }

    /// Eval-mode logits for each cloud, `[n_classes]` per cloud.
    pub fn classify(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<f32>>> {
        if self.config().task != Task::Classification {
            return Err(Error::InvalidArgument("model is not a classifier".into()));
        }
        let pts = batch_points(clouds)?;
        let mut tape = Tape::inference();
        let mut ctx = Ctx::eval();
        let trace = self.net.forward(&mut tape, &self.params, &mut ctx, pts)?;
        Ok(tape
            .value(trace.logits)
            .chunks_exact(self.config().n_outputs)
            .map(<[f32]>::to_vec)
            .collect())
    }

    /// Eval-mode per-point part logits, `[N][n_parts]` per cloud.
    pub fn segment(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<Vec<f32>>>> {
        if self.config().task != Task::PartSegmentation {
            return Err(Error::InvalidArgument("model is not a segmenter".into()));
        }
        let pts = batch_points(clouds)?;
        let n = pts.n;
        let mut tape = Tape::inference();
        let mut ctx = Ctx::eval();
        let trace = self.net.forward(&mut tape, &self.params, &mut ctx, pts)?;
        let k = self.config().n_outputs;
        Ok(tape
            .value(trace.logits)
            .chunks_exact(n * k)
            .map(|cloud| cloud.chunks_exact(k).map(<[f32]>::to_vec).collect())
            .collect())
    }
}

/// Logits of a single cloud under `mode` (training mode needs a batch-norm
/// friendly cloud of at least two points per group).
pub fn forward_classify(model: &Model, cloud: &PointCloud, mode: Mode) -> Result<Vec<f32>> {
    let pts = batch_points(&[cloud])?;
    let mut tape = if mode == Mode::Eval { Tape::inference() } else { Tape::new() };
    let mut ctx = Ctx::new(mode, ChaCha8Rng::seed_from_u64(0));
    let trace = model.net.forward(&mut tape, &model.params, &mut ctx, pts)?;
    Ok(tape.value(trace.logits).to_vec())
}

/// Per-point logits `[N · n_parts]` of a single cloud.
pub fn forward_segment(model: &Model, cloud: &PointCloud, mode: Mode) -> Result<Vec<f32>> {
    let pts = batch_points(&[cloud])?;
    let mut tape = if mode == Mode::Eval { Tape::inference() } else { Tape::new() };
    let mut ctx = Ctx::new(mode, ChaCha8Rng::seed_from_u64(0));
    let trace = model.net.forward(&mut tape, &model.params, &mut ctx, pts)?;
    Ok(tape.value(trace.logits).to_vec())
}
