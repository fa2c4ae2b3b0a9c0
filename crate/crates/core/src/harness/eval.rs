use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, MetricsReport};
use crate::data::{inject_noise, sample_points, AugmentDraw, Dataset, PointCloud, SamplePolicy};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::model::{batch_points, Model, Task};
use crate::pointops::{lexicographic_min, StartPolicy};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Forward passes per sample. Above one, each pass sees its own
    /// augmentation draw.
    pub voting: usize,
    /// Resample every cloud to this many points (FPS when shrinking).
    pub points: Option<usize>,
    /// Uniform noise points appended after resampling.
    pub noise: usize,
    /// Set to false to make every vote use the identity transform.
    pub augment: bool,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            voting: 1,
            points: None,
            noise: 0,
            augment: true,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Vote-averaged class probabilities of one sample: `[classes]` for a
/// classifier, `[N · parts]` row-major for a segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Ground truth: one class, or one part per evaluated point.
    pub truth: Vec<usize>,
}

impl Prediction {
    /// Argmax per row of `k` probabilities.
    pub fn labels(&self, k: usize) -> Vec<usize> {
        self.probs.chunks_exact(k).map(argmax).collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_into(logits: &[f32], k: usize, acc: &mut [f64]) {
    for (row, out) in logits.chunks_exact(k).zip(acc.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.iter_mut().zip(exps) {
            *o += e / sum;
        }
    }
}

/// The cloud a sample is evaluated on, after resampling and noise.
pub fn prepare_cloud(cloud: &PointCloud, cfg: &EvalConfig, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let mut c = match cfg.points {
        Some(m) if m < cloud.len() => {
            let start = StartPolicy::Index(lexicographic_min(&cloud.positions).unwrap_or(0));
            sample_points(cloud, m, SamplePolicy::Fps(start), rng)?
        }
        Some(m) if m > cloud.len() => sample_points(cloud, m, SamplePolicy::Uniform, rng)?,
        _ => cloud.clone(),
    };
    if cfg.noise > 0 {
        c = inject_noise(&c, cfg.noise, rng);
    }
    Ok(c)
}

fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    let cfg = model.config();
    match cfg.task {
        Task::Classification => {
            if data.n_classes() != cfg.n_outputs {
                return Err(Error::Dataset(format!(
                    "model predicts {} classes, dataset has {}",
                    cfg.n_outputs,
                    data.n_classes()
                )));
            }
            if let Some(i) = data.clouds.iter().position(|c| c.class.is_none_or(|k| k >= cfg.n_outputs)) {
                return Err(Error::Dataset(format!("cloud {i} has no valid class label")));
            }
        }
        Task::PartSegmentation => {
            if data.n_parts != cfg.n_outputs {
                return Err(Error::Dataset(format!(
                    "model predicts {} parts, dataset has {}",
                    cfg.n_outputs, data.n_parts
                )));
            }
            if let Some(i) = data.clouds.iter().position(|c| c.parts.is_none()) {
                return Err(Error::Dataset(format!("cloud {i} has no part labels")));
            }
        }
    }
    Ok(())
}

/// Runs vote-averaged inference over a dataset. Each sample draws its
/// resampling, noise and augmentation from its own stream of `cfg.seed`, so
/// results do not depend on batching.
pub fn predict(model: &Model, data: &Dataset, cfg: &EvalConfig) -> Result<Vec<Prediction>> {
    if cfg.voting == 0 {
        return Err(Error::InvalidArgument("voting must be at least 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    check_compatible(model, data)?;
    let k = model.config().n_outputs;
    let task = model.config().task;

    let mut prepared = Vec::with_capacity(data.len());
    for (i, cloud) in data.clouds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let c = prepare_cloud(cloud, cfg, &mut rng)?;
        let draws: Vec<AugmentDraw> = (0..cfg.voting)
            .map(|_| {
                if cfg.voting > 1 && cfg.augment {
                    AugmentDraw::sample(&mut rng)
                } else {
                    AugmentDraw::IDENTITY
                }
            })
            .collect();
        prepared.push((c, draws));
    }

    let mut out: Vec<Prediction> = prepared
        .iter()
        .map(|(c, _)| Prediction {
            probs: vec![0.0; if task == Task::Classification { k } else { c.len() * k }],
            truth: match task {
                Task::Classification => vec![c.class.expect("checked")],
                Task::PartSegmentation => c.parts.clone().expect("checked"),
            },
        })
        .collect();

    // Consecutive samples of equal size share a batch.
    let mut start = 0;
    while start < prepared.len() {
        let n = prepared[start].0.len();
        let mut end = start + 1;
        while end < prepared.len() && end - start < cfg.batch_size && prepared[end].0.len() == n {
            end += 1;
        }
        for v in 0..cfg.voting {
            let views: Vec<PointCloud> = prepared[start..end]
                .iter()
                .map(|(c, draws)| {
                    if draws[v] == AugmentDraw::IDENTITY {
                        c.clone()
                    } else {
                        draws[v].apply(c)
                    }
                })
                .collect();
            let refs: Vec<&PointCloud> = views.iter().collect();
            let pts = batch_points(&refs)?;
            let mut tape = Tape::inference();
            let mut ctx = Ctx::eval();
            let trace = model.net.forward(&mut tape, &model.params, &mut ctx, pts)?;
            let logits = tape.value(trace.logits);
            let per = logits.len() / (end - start);
            for (j, chunk) in logits.chunks_exact(per).enumerate() {
                softmax_into(chunk, k, &mut out[start + j].probs);
            }
        }
        start = end;
    }
    if cfg.voting > 1 {
        let inv = 1.0 / cfg.voting as f64;
        for p in &mut out {
            p.probs.iter_mut().for_each(|x| *x *= inv);
        }
    }
    Ok(out)
}

/// Vote-averaged metrics of `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset, cfg: &EvalConfig) -> Result<MetricsReport> {
    let preds = predict(model, data, cfg)?;
    metrics_of(model, &preds)
}

pub fn metrics_of(model: &Model, preds: &[Prediction]) -> Result<MetricsReport> {
    let k = model.config().n_outputs;
    let mut confusion = Confusion::new(k);
    for p in preds {
        confusion.extend(&p.labels(k), &p.truth)?;
    }
    Ok(match model.config().task {
        Task::Classification => MetricsReport::classification(confusion, preds.len()),
        Task::PartSegmentation => MetricsReport::segmentation(confusion, preds.len()),
    })
}
