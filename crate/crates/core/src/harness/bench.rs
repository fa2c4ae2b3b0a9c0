use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{synth_shapes, PointCloud};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::model::{batch_points, Model};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub points: usize,
    pub warmup: usize,
    /// Timed batches; at least 20.
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 1,
            points: 1024,
            warmup: 2,
            runs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub batch_size: usize,
    pub points: usize,
    pub runs: usize,
    pub median_batch_ms: f64,
    pub per_sample_ms: f64,
    /// High-water mark of tensor bytes held by one inference pass.
    pub peak_bytes: usize,
}

/// Times eval-mode inference on synthetic clouds.
pub fn bench(model: &Model, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if cfg.runs < 20 {
        return Err(Error::InvalidArgument(format!("{} timed runs; at least 20 are required", cfg.runs)));
    }
    let per_class = cfg.batch_size.div_ceil(4);
    let data = synth_shapes(per_class, cfg.points.max(64), cfg.seed)?;
    let clouds: Vec<PointCloud> = data
        .clouds
        .iter()
        .take(cfg.batch_size)
        .map(|c| c.select(&(0..cfg.points).collect::<Vec<_>>()))
        .collect();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let pts = batch_points(&refs)?;

    let mut times = Vec::with_capacity(cfg.runs);
    let mut peak = 0;
    for i in 0..cfg.warmup + cfg.runs {
        let started = Instant::now();
        let mut tape = Tape::inference();
        let mut ctx = Ctx::eval();
        let trace = model.net.forward(&mut tape, &model.params, &mut ctx, pts.clone())?;
        std::hint::black_box(tape.value(trace.logits));
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        peak = peak.max(tape.peak_bytes());
        if i >= cfg.warmup {
            times.push(elapsed);
        }
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 0 {
        (times[mid - 1] + times[mid]) / 2.0
    } else {
        times[mid]
    };
    Ok(BenchReport {
        model: model.config().name.clone(),
        batch_size: cfg.batch_size,
        points: cfg.points,
        runs: cfg.runs,
        median_batch_ms: median,
        per_sample_ms: median / cfg.batch_size as f64,
        peak_bytes: peak,
    })
}
