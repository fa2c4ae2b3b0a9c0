use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalConfig};
use super::metrics::MetricsReport;
use super::train::{train, TrainConfig, TrainOptions};
use crate::data::{synth_shapes, Dataset};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::model::{batch_points, Model, ModelConfig, Task};
use crate::tensor::{Mode, Tape};

/// A component that the component sweep switches off, one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Augmentation,
    Residual,
    Voting,
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "augmentation" | "da" => Ok(Toggle::Augmentation),
            "residual" | "r" => Ok(Toggle::Residual),
            "voting" => Ok(Toggle::Voting),
            other => Err(Error::InvalidArgument(format!(
                "unknown toggle {other:?} (expected augmentation, residual or voting)"
            ))),
        }
    }
}

impl Toggle {
    fn label(self) -> &'static str {
        match self {
            Toggle::Augmentation => "no-augmentation",
            Toggle::Residual => "no-residual",
            Toggle::Voting => "no-voting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sweep", rename_all = "lowercase")]
pub enum SweepSpec {
    /// The full model, then one row per toggle with that component off.
    Components {
        toggles: Vec<String>,
        #[serde(default = "ten")]
        voting: usize,
    },
    /// One trained model evaluated at each input size.
    Points { values: Vec<usize> },
    /// One trained model evaluated with each count of appended noise points.
    Noise { values: Vec<usize> },
    /// Group counts; trains and evaluates each when `train` is set.
    Groups {
        values: Vec<usize>,
        #[serde(default)]
        train: bool,
    },
    /// Backbone level counts of the classifier family.
    Levels {
        values: Vec<usize>,
        #[serde(default)]
        train: bool,
    },
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: String,
    pub setting: String,
    pub parameters: usize,
    pub flops: u64,
    /// Dependency edges of one training step on a two-cloud batch.
    pub graph_edges: usize,
    pub epochs: usize,
    pub overall_accuracy: Option<f64>,
    pub mean_class_accuracy: Option<f64>,
    pub miou: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub const CSV_HEADER: &str =
    "sweep,setting,parameters,flops,graph_edges,epochs,overall_accuracy,mean_class_accuracy,miou,seconds";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.3}",
                r.sweep,
                r.setting,
                r.parameters,
                r.flops,
                r.graph_edges,
                r.epochs,
                opt(r.overall_accuracy),
                opt(r.mean_class_accuracy),
                opt(r.miou),
                r.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Edges recorded by a forward pass, loss and nothing else, for two
/// synthetic clouds of `points` points.
pub fn graph_edges(config: &ModelConfig, points: usize) -> Result<usize> {
    let model = Model::build(config, 0)?;
    let probe = synth_shapes(1, points.max(64), 0)?;
    let clouds: Vec<_> = probe.clouds.iter().take(2).map(|c| c.select(&(0..points.min(c.len())).collect::<Vec<_>>())).collect();
    let refs: Vec<_> = clouds.iter().collect();
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(Mode::Train, ChaCha8Rng::seed_from_u64(0));
    let trace = model.net.forward(&mut tape, &model.params, &mut ctx, batch_points(&refs)?)?;
    let rows = tape.dims2(trace.logits).0;
    tape.softmax_cross_entropy(trace.logits, &vec![0; rows])?;
    Ok(tape.edge_count())
}

fn row(sweep: &str, setting: String, cfg: &TrainConfig, metrics: Option<&MetricsReport>, seconds: f64) -> Result<AblationRow> {
    let model = Model::build(&cfg.model, 0)?;
    let cost = model.net.complexity(cfg.points);
    Ok(AblationRow {
        sweep: sweep.into(),
        setting,
        parameters: cost.parameters,
        flops: cost.flops,
        graph_edges: graph_edges(&cfg.model, cfg.points)?,
        epochs: if metrics.is_some() { cfg.epochs } else { 0 },
        overall_accuracy: metrics.map(|m| m.overall_accuracy),
        mean_class_accuracy: metrics.map(|m| m.mean_class_accuracy),
        miou: metrics.and_then(|m| m.part_category_miou),
        seconds,
    })
}

fn fit(cfg: &TrainConfig, train_set: &Dataset, verbose: bool) -> Result<Model> {
    let opts = TrainOptions {
        verbose,
        ..TrainOptions::default()
    };
    Ok(train(cfg, train_set, &opts)?.model)
}

/// Plain evaluation settings used throughout the sweeps.
pub fn base_eval(cfg: &TrainConfig) -> EvalConfig {
    EvalConfig {
        points: Some(cfg.points),
        seed: cfg.seed,
        ..EvalConfig::default()
    }
}

/// Runs a sweep. Every row that trains uses `base` with one field changed.
pub fn ablate(
    spec: &SweepSpec,
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    verbose: bool,
) -> Result<AblationTable> {
    base.validate()?;
    let mut rows = Vec::new();
    let plain = base_eval(base);
    match spec {
        SweepSpec::Components { toggles, voting } => {
            let toggles = toggles.iter().map(|t| t.parse()).collect::<Result<Vec<Toggle>>>()?;
            if toggles.is_empty() {
                return Ok(AblationTable::default());
            }
            let voted = EvalConfig {
                voting: *voting,
                ..plain
            };
            let t0 = Instant::now();
            let full = fit(base, train_set, verbose)?;
            let m = evaluate(&full, test_set, &voted)?;
            rows.push(row("components", "full".into(), base, Some(&m), t0.elapsed().as_secs_f64())?);
            for t in toggles {
                let t0 = Instant::now();
                let (cfg, m) = match t {
                    Toggle::Voting => (base.clone(), evaluate(&full, test_set, &plain)?),
                    Toggle::Augmentation => {
                        let cfg = TrainConfig {
                            augment: false,
                            ..base.clone()
                        };
                        let m = evaluate(&fit(&cfg, train_set, verbose)?, test_set, &voted)?;
                        (cfg, m)
                    }
                    Toggle::Residual => {
                        let cfg = TrainConfig {
                            model: base.model.clone().without_residual(),
                            ..base.clone()
                        };
                        let m = evaluate(&fit(&cfg, train_set, verbose)?, test_set, &voted)?;
                        (cfg, m)
                    }
                };
                rows.push(row("components", t.label().into(), &cfg, Some(&m), t0.elapsed().as_secs_f64())?);
            }
        }
        SweepSpec::Points { values } | SweepSpec::Noise { values } => {
            if values.is_empty() {
                return Ok(AblationTable::default());
            }
            let is_points = matches!(spec, SweepSpec::Points { .. });
            let model = fit(base, train_set, verbose)?;
            for &v in values {
                let t0 = Instant::now();
                let eval = if is_points {
                    EvalConfig {
                        points: Some(v),
                        ..plain
                    }
                } else {
                    EvalConfig { noise: v, ..plain }
                };
                let m = evaluate(&model, test_set, &eval)?;
                let mut r = row(
                    if is_points { "points" } else { "noise" },
                    v.to_string(),
                    base,
                    Some(&m),
                    t0.elapsed().as_secs_f64(),
                )?;
                if is_points {
                    let cost = model.net.complexity(v);
                    r.flops = cost.flops;
                    r.graph_edges = graph_edges(&base.model, v)?;
                }
                rows.push(r);
            }
        }
        SweepSpec::Groups { values, train: do_train } | SweepSpec::Levels { values, train: do_train } => {
            let is_groups = matches!(spec, SweepSpec::Groups { .. });
            for &v in values {
                let t0 = Instant::now();
                let model = if is_groups {
                    ModelConfig {
                        n_groups: v,
                        ..base.model.clone()
                    }
                } else {
                    if base.model.task != Task::Classification {
                        return Err(Error::InvalidArgument("the level sweep uses the classifier family".into()));
                    }
                    ModelConfig::with_levels(v, base.model.n_outputs, base.model.n_groups)?
                };
                let cfg = TrainConfig {
                    model,
                    ..base.clone()
                };
                let metrics = if *do_train {
                    Some(evaluate(&fit(&cfg, train_set, verbose)?, test_set, &plain)?)
                } else {
                    Model::build(&cfg.model, 0)?;
                    None
                };
                rows.push(row(
                    if is_groups { "groups" } else { "levels" },
                    v.to_string(),
                    &cfg,
                    metrics.as_ref(),
                    t0.elapsed().as_secs_f64(),
                )?);
            }
        }
    }
    Ok(AblationTable { rows })
}
