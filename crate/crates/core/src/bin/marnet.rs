use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marnet::data::{synth_segmentation, synth_shapes, write_xyzn, Dataset, DatasetManifest, ManifestEntry, ShapeKind, Split};
use marnet::harness::{
    ablate, bench, evaluate, load_checkpoint, run_suite, train, BenchConfig, EvalConfig, GradSuiteConfig, SweepSpec,
    TrainConfig, TrainOptions,
};
use marnet::layers::FpsStart;
use marnet::model::{Model, ModelConfig};
use marnet::{Error, Result};

// Stdout writes that ignore a closed pipe.
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "marnet", version, about = "Multi-abstraction refinement networks for point clouds")]
struct Cli {
    /// Single-threaded execution with an order-independent sampling start.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic shape dataset with train and test manifests.
    Synth(SynthArgs),
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradArgs),
    /// Run an ablation sweep and write a CSV table.
    Ablate(AblateArgs),
    /// Time inference.
    Bench(BenchArgs),
    /// Print parameter and FLOP counts.
    Complexity(ComplexityArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// classifier, segmenter, lite or lite-seg.
    #[arg(long, default_value = "classifier")]
    model: String,
    /// Model configuration file (JSON); overrides --model.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    groups: usize,
    /// Classes or parts.
    #[arg(long, default_value_t = 4)]
    outputs: usize,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        if let Some(path) = &self.model_config {
            return ModelConfig::from_json(&read(path)?);
        }
        preset(&self.model, self.outputs, self.groups)
    }
}

fn preset(name: &str, outputs: usize, groups: usize) -> Result<ModelConfig> {
    Ok(match name {
        "classifier" | "marnet" => ModelConfig::classifier(outputs, groups),
        "segmenter" | "seg" => ModelConfig::segmenter(outputs, groups),
        "lite" => ModelConfig::lite(outputs, groups),
        "lite-seg" => ModelConfig::lite_segmenter(outputs, groups),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown model {other:?} (expected classifier, segmenter, lite or lite-seg)"
            )))
        }
    })
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two-part hemisphere clouds (sphere and torus) instead of four classes.
    #[arg(long)]
    segmentation: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Training manifest; a synthetic set is generated when absent.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Validation or test manifest.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Synthetic clouds per class when no manifest is given.
    #[arg(long, default_value_t = 50)]
    synth_per_class: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON); --model is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    voting: usize,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    noise: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 8)]
    points: usize,
    /// Elements checked per parameter tensor of the full models.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Base training configuration (JSON); a 4-class lite setup when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep description (JSON), e.g. {"sweep": "noise", "values": [0, 10]}.
    #[arg(long)]
    sweep: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to time; an untrained --model otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long)]
    json: bool,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load(path: &Path) -> Result<Dataset> {
    DatasetManifest::load(path)?.load_dataset()
}

fn datasets(args: &DataArgs, cfg: &TrainConfig) -> Result<(Dataset, Option<Dataset>)> {
    let train = match &args.train_data {
        Some(p) => load(p)?,
        None => synthetic(cfg, args.synth_per_class, cfg.seed)?,
    };
    let test = match &args.test_data {
        Some(p) => Some(load(p)?),
        None if args.train_data.is_none() => Some(synthetic(cfg, args.synth_per_class.div_ceil(2), cfg.seed + 1)?),
        None => None,
    };
    Ok((train, test))
}

fn synthetic(cfg: &TrainConfig, per_class: usize, seed: u64) -> Result<Dataset> {
    let points = cfg.points.max(64);
    match cfg.model.task {
        marnet::model::Task::Classification => synth_shapes(per_class, points, seed),
        marnet::model::Task::PartSegmentation => {
            synth_segmentation(&[ShapeKind::Sphere, ShapeKind::Torus], per_class, points, seed)
        }
    }
}

/// Loads `path` when given, else starts from `fallback`, then applies the
/// command-line overrides.
fn train_config(path: Option<&PathBuf>, fallback: TrainConfig, seed: Option<u64>, epochs: Option<usize>, points: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_json(&read(p)?)?,
        None => fallback,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(p) = points {
        cfg.points = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let kinds = [ShapeKind::Sphere, ShapeKind::Torus];
    let make = |per_class, seed| {
        if a.segmentation {
            synth_segmentation(&kinds, per_class, a.points, seed)
        } else {
            synth_shapes(per_class, a.points, seed)
        }
    };
    for (split, per_class, seed) in [(Split::Train, a.per_class, a.seed), (Split::Test, a.test_per_class, a.seed + 1)] {
        let data = make(per_class, seed)?;
        let dir = a.out_dir.join(split.as_str());
        create_dir(&dir)?;
        let mut entries = Vec::with_capacity(data.len());
        for (i, c) in data.clouds.iter().enumerate() {
            let class = c.class.unwrap_or(0);
            let path = dir.join(format!("{}_{i:04}.xyzn", data.class_names[class]));
            write_xyzn(&path, c)?;
            entries.push(ManifestEntry { path, label: class });
        }
        let manifest = DatasetManifest {
            split,
            class_names: data.class_names.clone(),
            entries,
        };
        let path = a.out_dir.join(format!("{split}.json"));
        manifest.save(&path)?;
        outln!("{}: {} clouds -> {}", split, data.len(), path.display());
    }
    Ok(())
}

fn run_train(a: &TrainArgs, deterministic: bool) -> Result<()> {
    let mut cfg = train_config(a.config.as_ref(), TrainConfig::new(a.model.config()?, 50, 0), a.seed, a.epochs, a.points)?;
    if deterministic {
        cfg.fps_start = FpsStart::Lexicographic;
    }
    let (train_set, val) = datasets(&a.data, &cfg)?;
    create_dir(&a.out_dir)?;
    write(&a.out_dir.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let opts = TrainOptions {
        val: val.as_ref(),
        out_dir: Some(a.out_dir.clone()),
        verbose: !a.quiet,
    };
    let outcome = train(&cfg, &train_set, &opts)?;
    write(&a.out_dir.join("log.json"), &serde_json::to_string_pretty(&outcome.log)?)?;
    match outcome.best {
        Some((epoch, v)) => outln!("best validation metric {v:.4} at epoch {epoch}"),
        None => outln!("trained {} epochs", outcome.log.len()),
    }
    outln!("checkpoints in {}", a.out_dir.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let data = load(&a.data)?;
    let cfg = EvalConfig {
        voting: a.voting,
        points: a.points,
        noise: a.noise,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let m = evaluate(&model, &data, &cfg)?;
    if a.json {
        outln!("{}", serde_json::to_string_pretty(&m)?);
    } else {
        outln!("samples               {}", m.samples);
        outln!("overall accuracy      {:.4}", m.overall_accuracy);
        outln!("mean class accuracy   {:.4}", m.mean_class_accuracy);
        if let Some(v) = m.part_category_miou {
            outln!("part-category mIoU    {v:.4}");
        }
    }
    Ok(())
}

fn run_gradcheck(a: &GradArgs) -> Result<bool> {
    let cfg = GradSuiteConfig {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        points: a.points,
        model_samples: a.samples,
        seed: a.seed,
    };
    let cases = run_suite(&cfg)?;
    let mut ok = true;
    for c in &cases {
        ok &= c.pass;
        outln!(
            "{:<24} {}  max rel err {:.3e}  {:>5} elements  {:.1}s",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.max_rel_err,
            c.checked,
            c.seconds
        );
    }
    Ok(ok)
}

fn run_ablate(a: &AblateArgs, deterministic: bool) -> Result<()> {
    let spec: SweepSpec = serde_json::from_str(&read(&a.sweep)?)?;
    let fallback = TrainConfig {
        points: 256,
        batch_size: 16,
        ..TrainConfig::new(ModelConfig::lite(4, 2), 30, 0)
    };
    let mut cfg = train_config(a.config.as_ref(), fallback, a.seed, a.epochs, a.points)?;
    if deterministic {
        cfg.fps_start = FpsStart::Lexicographic;
    }
    let (train_set, test) = datasets(&a.data, &cfg)?;
    let test = test.ok_or_else(|| Error::InvalidArgument("ablation needs --test-data with --train-data".into()))?;
    let table = ablate(&spec, &cfg, &train_set, &test, true)?;
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("ablation.csv");
    table.write_csv(&path)?;
    out!("{}", table.to_csv());
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => Model::build(&a.model.config()?, a.seed)?,
    };
    let r = bench(
        &model,
        &BenchConfig {
            batch_size: a.batch_size,
            points: a.points,
            warmup: a.warmup,
            runs: a.runs,
            seed: a.seed,
        },
    )?;
    outln!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn run_complexity(a: &ComplexityArgs) -> Result<()> {
    let model = Model::build(&a.model.config()?, 0)?;
    let r = model.net.complexity(a.points);
    if a.json {
        outln!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    outln!("{:<10} {:>10} {:>14} {:>9} {:>7}", "layer", "params", "flops", "channels", "points");
    for l in &r.layers {
        outln!("{:<10} {:>10} {:>14} {:>9} {:>7}", l.name, l.params, l.flops, l.channels, l.points);
    }
    outln!("{}: {} parameters, {:.1}M FLOPs at {} points", r.model, r.parameters, r.flops as f64 / 1e6, r.input_points);
    outln!("({})", r.convention);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let det = cli.deterministic;
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a, det),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Ablate(a) => run_ablate(a, det),
        Command::Bench(a) => run_bench(a),
        Command::Complexity(a) => run_complexity(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
