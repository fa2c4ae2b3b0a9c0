use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, TrainState};
use super::eval::{evaluate, EvalConfig};
use crate::data::{augment, sample_points, Dataset, PointCloud, SamplePolicy};
use crate::error::{Error, Result};
use crate::layers::{Ctx, FpsStart};
use crate::model::{batch_points, Model, ModelConfig, Task};
use crate::tensor::{Adam, AdamConfig, Mode, Tape};

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Multiplier applied every `decay_every` epochs.
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::decay_every")]
    pub decay_every: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::yes")]
    pub augment: bool,
    /// Points sampled from every cloud per step.
    #[serde(default = "defaults::points")]
    pub points: usize,
    #[serde(default)]
    pub fps_start: FpsStart,
    /// Stop once the validation headline metric reaches this value.
    #[serde(default)]
    pub stop_at: Option<f64>,
    pub model: ModelConfig,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn lr_decay() -> f64 {
        0.7
    }
    pub fn decay_every() -> usize {
        20
    }
    pub fn yes() -> bool {
        true
    }
    pub fn points() -> usize {
        1024
    }
}

impl TrainConfig {
    pub fn new(model: ModelConfig, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            lr: defaults::lr(),
            weight_decay: defaults::weight_decay(),
            batch_size: defaults::batch_size(),
            lr_decay: defaults::lr_decay(),
            decay_every: defaults::decay_every(),
            epochs,
            seed,
            augment: true,
            points: defaults::points(),
            fps_start: FpsStart::default(),
            stop_at: None,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("decay factor {} outside (0, 1]", self.lr_decay));
        }
        if self.decay_every == 0 {
            return bad("decay interval must be positive".into());
        }
        if self.points == 0 {
            return bad("points must be positive".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Validation OA (classification) or mIoU (segmentation).
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) and value of the best validation metric.
    pub best: Option<(usize, f64)>,
    pub best_model: Option<Model>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub val: Option<&'a Dataset>,
    /// Writes `last.marc` and `best.marc` here when set.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

fn targets(task: Task, clouds: &[PointCloud]) -> Result<Vec<usize>> {
    let mut t = Vec::new();
    for (i, c) in clouds.iter().enumerate() {
        match task {
            Task::Classification => {
                t.push(c.class.ok_or_else(|| Error::Dataset(format!("cloud {i} has no class label")))?)
            }
            Task::PartSegmentation => t.extend(
                c.parts
                    .as_ref()
                    .ok_or_else(|| Error::Dataset(format!("cloud {i} has no part labels")))?,
            ),
        }
    }
    Ok(t)
}

fn hits(logits: &[f32], k: usize, truth: &[usize]) -> usize {
    logits
        .chunks_exact(k)
        .zip(truth)
        .filter(|(row, &t)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == t
        })
        .count()
}

/// One optimization step on a batch; returns the loss and number of correct rows.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam<f32>,
    clouds: &[PointCloud],
    ctx: &mut Ctx,
) -> Result<(f64, usize)> {
    let task = model.config().task;
    let k = model.config().n_outputs;
    let truth = targets(task, clouds)?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let pts = batch_points(&refs)?;
    let mut tape = Tape::new();
    let trace = model.net.forward(&mut tape, &model.params, ctx, pts)?;
    let correct = hits(tape.value(trace.logits), k, &truth);
    let loss = tape.softmax_cross_entropy(trace.logits, &truth)?;
    let value = tape.scalar(loss) as f64;
    if !value.is_finite() {
        return Ok((value, correct));
    }
    let grads = tape.backward(loss)?;
    model.params.zero_grads();
    grads.accumulate_into(&mut model.params)?;
    adam.step(&mut model.params)?;
    tape.apply_bn_updates(&mut model.params, BN_MOMENTUM);
    Ok((value, correct))
}

fn write_checkpoint(dir: &Path, name: &str, model: &Model, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    save_checkpoint(dir.join(name), model, state)
}

/// Trains a freshly initialized model. With `epochs = 0` the result is the
/// initialization itself.
pub fn train(cfg: &TrainConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut model = Model::build(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_model = None;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        adam.set_lr(lr);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut rows, mut correct, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // A single-cloud batch has no batch statistics at the global level.
            if chunk.len() < 2 && data.len() >= 2 {
                continue;
            }
            let mut clouds = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let c = &data.clouds[i];
                let c = if cfg.augment { augment(c, &mut rng) } else { c.clone() };
                clouds.push(sample_points(&c, cfg.points, SamplePolicy::Uniform, &mut rng)?);
            }
            let mut ctx = Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(rng.gen()));
            ctx.fps_start = cfg.fps_start;
            let (loss, hit) = train_step(&mut model, &mut adam, &clouds, &mut ctx)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, batch: b + 1 });
            }
            let n_rows = match cfg.model.task {
                Task::Classification => clouds.len(),
                Task::PartSegmentation => clouds.len() * cfg.points,
            };
            loss_sum += loss;
            batches += 1;
            rows += n_rows;
            correct += hit;
        }
        let state = TrainState {
            epoch: (epoch + 1) as u32,
            adam: adam.state.clone(),
        };
        let val_metric = match opts.val {
            Some(val) => {
                let eval = EvalConfig {
                    points: Some(cfg.points),
                    ..EvalConfig::default()
                };
                Some(evaluate(&model, val, &eval)?.headline())
            }
            None => None,
        };
        if let Some(v) = val_metric {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((epoch + 1, v));
                if let Some(dir) = &opts.out_dir {
                    write_checkpoint(dir, "best.marc", &model, &state)?;
                }
                best_model = Some(model.clone());
            }
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            train_accuracy: if rows > 0 { correct as f64 / rows as f64 } else { 0.0 },
            val_metric,
            seconds: started.elapsed().as_secs_f64(),
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>3}  lr {:.6}  loss {:.4}  train {:.4}  val {}  {:.1}s",
                entry.epoch,
                entry.lr,
                entry.loss,
                entry.train_accuracy,
                entry.val_metric.map_or("-".into(), |v| format!("{v:.4}")),
                entry.seconds
            );
        }
        log.push(entry);
        if let (Some(target), Some(v)) = (cfg.stop_at, val_metric) {
            if v >= target {
                break;
            }
        }
    }
    let state = TrainState {
        epoch: log.len() as u32,
        adam: adam.state,
    };
    if let Some(dir) = &opts.out_dir {
        write_checkpoint(dir, "last.marc", &model, &state)?;
    }
    Ok(TrainOutcome {
        model,
        state,
        log,
        best,
        best_model,
    })
}
