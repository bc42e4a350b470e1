//! Command-line front end for data generation, training, and experiment sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use c4vqc::circuits::Architecture;
use c4vqc::cnn::{layer_specs, shape_chain, CnnPipeline};
use c4vqc::data::{save_dataset, export_png_tree, Dataset, Manifest};
use c4vqc::experiments::{
    compare_with_callback, landscape_report, random_gray_image, symmetry_report, train_run, write_atomic,
    write_loss_curves_csv, write_metric_samples_csv, write_summary_csv, DatasetConfig, DatasetSource,
    ExperimentConfig, PreparedData, TrainedModel,
};
use c4vqc::{Error, Result};

#[derive(Parser)]
#[command(name = "c4vqc", version, about = "Rotation-invariant variational quantum classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset and write it with a manifest.
    GenerateData(GenerateData),
    /// Check orbits, group identities, and equivariance; writes a JSON report.
    VerifySymmetry(VerifySymmetry),
    /// Train one model; writes a checkpoint, history CSV, and run record.
    Train(Train),
    /// Score a checkpoint on the dataset described by a config.
    Evaluate(Evaluate),
    /// Loss and gradient statistics over random parameters at one data point.
    Landscape(Landscape),
    /// Run a full architecture sweep and write summary tables.
    Compare(Compare),
    /// Print the convolution pipeline's shape chain.
    Shapes(Shapes),
}

#[derive(Args)]
struct GenerateData {
    /// Experiment config whose dataset section is used instead of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tetromino")]
    source: Source,
    #[arg(long, default_value_t = 4)]
    resolution: usize,
    /// Image count for garments.
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 25.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 1)]
    noise_copies: usize,
    /// Add every distinct rotation of each base image.
    #[arg(long)]
    rotations: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export the images as `<class>/<index>.png`.
    #[arg(long)]
    png: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Tetromino,
    Garments,
}

#[derive(Args)]
struct VerifySymmetry {
    #[arg(long = "n", value_delimiter = ',', default_values_t = vec![2, 3, 4])]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    n_layers: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunSelection {
    /// Defaults to the sweep's first architecture.
    #[arg(long)]
    architecture: Option<Architecture>,
    /// Defaults to the sweep's first layer count.
    #[arg(long)]
    n_layers: Option<usize>,
    /// Defaults to the sweep's first seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    run: RunSelection,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config describing the dataset and split.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Landscape {
    #[arg(long = "n", default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    n_layers: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Seed of the parameter draws.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seed of the random grayscale data point.
    #[arg(long, default_value_t = 3)]
    image_seed: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    label: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    angle_lo: f64,
    #[arg(long, default_value_t = std::f64::consts::PI, allow_negative_numbers = true)]
    angle_hi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Compare {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Shapes {
    /// Experiment config with a `cnn_pipeline` section.
    #[arg(long, conflicts_with_all = ["side", "filters"])]
    config: Option<PathBuf>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, default_value_t = 1)]
    channels_in: usize,
    #[arg(long, value_delimiter = ',')]
    filters: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
    /// Pool window per layer, 0 for none.
    #[arg(long, value_delimiter = ',')]
    pools: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::VerifySymmetry(a) => verify_symmetry(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Landscape(a) => landscape(a),
        Command::Compare(a) => compare(a),
        Command::Shapes(a) => shapes(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn generate_data(a: GenerateData) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.dataset,
        None => DatasetConfig {
            source: match a.source {
                Source::Tetromino => DatasetSource::Tetromino,
                Source::Garments => DatasetSource::Garments,
            },
            resolution: a.resolution,
            count: a.count,
            noise_sigma: a.noise_sigma,
            noise_copies: a.noise_copies,
            rotations: a.rotations,
            seed: a.seed,
            ..DatasetConfig::tetromino()
        },
    };
    let d = cfg.build()?;
    create_dir(&a.out)?;
    let dataset_path = a.out.join("dataset.json");
    save_dataset(&d, &dataset_path)?;
    if a.png {
        export_png_tree(&d, &a.out.join("png"))?;
    }
    let manifest = Manifest {
        source: serde_json::to_value(cfg.source)?.as_str().unwrap_or_default().to_string(),
        resolution: cfg.resolution,
        noise_sigma: cfg.noise_sigma,
        noise_copies: cfg.noise_copies,
        rotations: cfg.rotations,
        seed: cfg.seed,
        dataset_path,
        items: d.len(),
        positives: d.count_label(1),
        negatives: d.count_label(-1),
    };
    emit(&manifest, Some(&a.out.join("manifest.json")))?;
    eprintln!("{} images ({} {}, {} {})", d.len(), manifest.positives, d.class_names.positive, manifest.negatives, d.class_names.negative);
    Ok(())
}

fn verify_symmetry(a: VerifySymmetry) -> Result<()> {
    let reports = a
        .resolutions
        .iter()
        .map(|&n| symmetry_report(n, a.n_layers, a.samples, a.seed))
        .collect::<Result<Vec<_>>>()?;
    emit(&reports, a.out.as_deref())?;
    let failed: Vec<usize> = reports.iter().filter(|r| !r.passed).map(|r| r.n).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("symmetry checks failed at n = {failed:?}")))
    }
}

fn pick(config: &ExperimentConfig, run: &RunSelection) -> (Architecture, usize, u64) {
    let s = &config.sweep;
    (
        run.architecture.unwrap_or(s.architectures[0]),
        run.n_layers.unwrap_or(s.n_layers[0]),
        run.seed.unwrap_or(s.seeds[0]),
    )
}

fn train(a: Train) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let (arch, nl, seed) = pick(&config, &a.run);
    let data = PreparedData::new(&config)?;
    let (record, model) = train_run(&config, &data, arch, nl, seed)?;
    create_dir(&a.out)?;
    model.save(&a.out.join("checkpoint.json"))?;
    let mut csv = Vec::new();
    record.history.write_csv(&mut csv)?;
    write_atomic(&a.out.join("history.csv"), &csv)?;
    write_atomic(&a.out.join("record.json"), record.to_json()?.as_bytes())?;
    eprintln!(
        "{arch} n_l={nl} seed={seed}: loss {:.4}, train f1 {:.3}, test f1 {:.3}",
        record.final_loss, record.train.f1, record.test.f1
    );
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let model = TrainedModel::load(&a.checkpoint)?;
    let data = PreparedData::new(&config)?;
    let d = match a.split {
        Split::Train => data.train,
        Split::Test => data.test,
        Split::All => Dataset {
            items: data.train.items.into_iter().chain(data.test.items).collect(),
            class_names: data.train.class_names,
        },
    };
    let (_, metrics) = model.evaluate(&d, &config.dataset.angle_range())?;
    emit(&metrics, a.out.as_deref())
}

fn landscape(a: Landscape) -> Result<()> {
    let pixels = random_gray_image(a.n, a.image_seed);
    let report = landscape_report(a.n, a.n_layers, pixels, a.label, [a.angle_lo, a.angle_hi], a.samples, a.seed)?;
    emit(&report, a.out.as_deref())
}

fn compare(a: Compare) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let runs = a.out.join("runs");
    create_dir(&runs)?;
    let comparison = compare_with_callback(&config, |r| {
        let path = runs.join(r.file_name());
        match r.to_json().and_then(|t| write_atomic(&path, t.as_bytes())) {
            Ok(()) => eprintln!("finished {}", r.file_name()),
            Err(e) => eprintln!("could not write {}: {e}", path.display()),
        }
    })?;
    let write_csv = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| {
        let mut buf = Vec::new();
        f(&mut buf)?;
        write_atomic(&a.out.join(name), &buf)
    };
    write_csv("summary.csv", &|b| write_summary_csv(&comparison.summary, b))?;
    write_csv("loss_curves.csv", &|b| write_loss_curves_csv(&comparison.records, b))?;
    write_csv("metric_samples.csv", &|b| write_metric_samples_csv(&comparison.records, b))?;
    emit(&comparison.failures, Some(&a.out.join("failures.json")))?;
    for f in &comparison.failures {
        eprintln!("run {} n_l={} seed={} failed: {}", f.architecture, f.n_layers, f.seed, f.error);
    }
    Ok(())
}

#[derive(Serialize)]
struct ShapeReport {
    stages: Vec<c4vqc::cnn::StageShape>,
    n_weights: usize,
}

fn shapes(a: Shapes) -> Result<()> {
    let (side, channels_in, layers, seed) = match &a.config {
        Some(p) => {
            let config = ExperimentConfig::load(p)?;
            let pc = config
                .cnn_pipeline
                .ok_or_else(|| Error::Validation("config has no cnn_pipeline section".into()))?;
            let ch = if config.dataset.grayscale { 1 } else { 3 };
            (config.dataset.resolution, ch, pc.layers()?, pc.seed)
        }
        None => {
            let side = a
                .side
                .ok_or_else(|| Error::Validation("either --config or --side is required".into()))?;
            let pools: Vec<usize> = a.pools.clone();
            (side, a.channels_in, layer_specs(&a.filters, &a.channels, &pools)?, 0)
        }
    };
    let stages = shape_chain(side, channels_in, &layers)?;
    let n_weights = CnnPipeline::new(side, channels_in, &layers, seed)?.n_weights();
    emit(&ShapeReport { stages, n_weights }, a.out.as_deref())
}
