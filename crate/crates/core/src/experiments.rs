//! Experiment configuration, architecture sweeps, and summary tables.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{
    build_model, encoding_layer, equivariant_block, Architecture, Checkpoint, ModelParams, ModelSpec, ReadoutGroup,
};
use crate::cnn::{layer_specs, CnnPipeline, LayerSpec};
use crate::data::{
    augment_noise, augment_rotations, gen_garment_glyphs, gen_tetrominoes, load_dataset, load_images, split,
    AngleRange, Dataset, ImageFormat, Samples,
};
use crate::error::{Error, Result};
use crate::hybrid::{dataset_tensor, train_hybrid, HybridCheckpoint, HybridModel};
use crate::metrics::MetricsReport;
use crate::statevector::{permute_qubits, simulate, AngleSource, Axis};
use crate::symmetry::{
    build_group_rep, compute_orbits, orbit_count, rotate_flat, verify_equivariance, EquivarianceReport, OrbitTable,
    VerifyOptions,
};
use crate::training::{evaluate, landscape_stats, train_with_test, LandscapeStats, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Every T and L tetromino placement.
    Tetromino,
    /// Synthetic shirt and trousers silhouettes.
    Garments,
    /// Two class directories of image files.
    Images,
    /// A dataset JSON written by `generate-data`.
    File,
}

fn default_angle_range() -> [f64; 2] {
    [0.0, PI]
}

fn default_test_ratio() -> f64 {
    1.0 / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Grid side for synthetic sources; target side for loaded images.
    pub resolution: usize,
    /// Image count for the garment source.
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_copies: usize,
    #[serde(default)]
    pub rotations: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,
    /// Pixel values `0..=255` map affinely onto this angle interval.
    #[serde(default = "default_angle_range")]
    pub angle_range: [f64; 2],
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<ImageFormat>,
    #[serde(default)]
    pub grayscale: bool,
}

impl DatasetConfig {
    pub fn tetromino() -> Self {
        Self {
            source: DatasetSource::Tetromino,
            resolution: 4,
            count: 0,
            noise_sigma: 25.0,
            noise_copies: 1,
            rotations: false,
            seed: 0,
            test_ratio: 2.0 / 3.0,
            angle_range: default_angle_range(),
            path: None,
            format: None,
            grayscale: true,
        }
    }

    pub fn angle_range(&self) -> AngleRange {
        AngleRange {
            lo: self.angle_range[0],
            hi: self.angle_range[1],
        }
    }

    /// Builds the full dataset, before splitting.
    pub fn build(&self) -> Result<Dataset> {
        let base = match self.source {
            DatasetSource::Tetromino => gen_tetrominoes(self.resolution)?,
            DatasetSource::Garments => gen_garment_glyphs(self.resolution, self.count, self.noise_sigma, self.seed)?,
            DatasetSource::Images => {
                let path = self.path.as_deref().ok_or_else(|| {
                    Error::Configuration("image datasets need a `path`".into())
                })?;
                load_images(path, self.format.unwrap_or(ImageFormat::Png), self.resolution, self.grayscale)?
            }
            DatasetSource::File => {
                let path = self.path.as_deref().ok_or_else(|| {
                    Error::Configuration("file datasets need a `path`".into())
                })?;
                load_dataset(path)?
            }
        };
        let base = if self.rotations { augment_rotations(&base) } else { base };
        // Garment noise is applied per image at generation time.
        if self.noise_copies > 0 && self.source != DatasetSource::Garments {
            augment_noise(&base, self.noise_sigma, self.noise_copies, self.seed)
        } else {
            Ok(base)
        }
    }

    pub fn build_split(&self) -> Result<(Dataset, Dataset)> {
        let d = self.build()?;
        d.validate_for_training()?;
        split(&d, self.test_ratio, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub random_orbit_seed: u64,
    #[serde(default = "default_axis")]
    pub rotation_axis: Axis,
    #[serde(default)]
    pub readout: ReadoutGroup,
}

fn default_axis() -> Axis {
    Axis::X
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            random_orbit_seed: 0,
            rotation_axis: Axis::X,
            readout: ReadoutGroup::Tied,
        }
    }
}

/// Layer rows as per-layer filter sides `n_w`, channel counts `n_c`, and
/// pool windows `n_p` (empty for no pooling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filters: Vec<usize>,
    pub channels: Vec<usize>,
    #[serde(default)]
    pub pools: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// ReLU after the last convolution.
    #[serde(default = "default_true")]
    pub final_relu: bool,
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let mut specs = layer_specs(&self.filters, &self.channels, &self.pools)?;
        if let Some(last) = specs.last_mut() {
            last.relu = self.final_relu;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    pub n_layers: Vec<usize>,
    /// Runs executed concurrently; 0 uses the global pool.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub cnn_pipeline: Option<PipelineConfig>,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.architectures.is_empty() || s.seeds.is_empty() || s.n_layers.is_empty() {
            return Err(Error::Validation(
                "sweep needs at least one architecture, seed, and layer count".into(),
            ));
        }
        self.train.validate()?;
        if let Some(p) = &self.cnn_pipeline {
            p.layers()?;
        }
        Ok(())
    }

    /// Circuit side: the pipeline's output side, or the dataset resolution.
    pub fn circuit_side(&self) -> Result<usize> {
        match &self.cnn_pipeline {
            Some(p) => {
                let chain = crate::cnn::shape_chain(self.dataset.resolution, 1, &p.layers()?)?;
                Ok(chain.last().expect("nonempty").side)
            }
            None => Ok(self.dataset.resolution),
        }
    }

    pub fn spec(&self, architecture: Architecture, n_layers: usize) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(architecture, self.circuit_side()?, n_layers);
        if architecture == Architecture::NonEquivariant {
            spec.random_orbit_seed = Some(self.model.random_orbit_seed);
        }
        spec.rotation_axis = self.model.rotation_axis;
        spec.readout = self.model.readout;
        spec.validate()?;
        Ok(spec)
    }
}

/// One trained model with its history and final metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub history: TrainHistory,
    /// Training-set loss at the final parameters.
    pub final_loss: f64,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub params: Vec<f64>,
    #[serde(default)]
    pub cnn_weights: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn file_name(&self) -> String {
        format!("{}_nl{}_seed{}.json", self.spec.architecture, self.spec.n_layers, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub architecture: Architecture,
    pub n_layers: usize,
    pub seed: u64,
    pub error: String,
}

/// Train and test splits prepared once per sweep.
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

impl PreparedData {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let (train, test) = config.dataset.build_split()?;
        Ok(Self { train, test })
    }
}

/// A trained model of either kind, as written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainedModel {
    // Listed first: a hybrid checkpoint also parses as a circuit checkpoint.
    Hybrid(HybridCheckpoint),
    Circuit(Checkpoint),
}

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        match self {
            TrainedModel::Hybrid(h) => &h.spec,
            TrainedModel::Circuit(c) => &c.spec,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("pipeline").is_some() {
            Ok(TrainedModel::Hybrid(serde_json::from_value(value)?))
        } else {
            Ok(TrainedModel::Circuit(Checkpoint::from_json(&text)?))
        }
    }

    /// Loss and metrics on `data`; circuit models map pixels with `angle_range`.
    pub fn evaluate(&self, data: &Dataset, angle_range: &AngleRange) -> Result<(f64, MetricsReport)> {
        match self {
            TrainedModel::Circuit(c) => {
                let plan = build_model(&c.spec)?;
                evaluate(&plan, &c.params, &Samples::from_dataset(data, angle_range))
            }
            TrainedModel::Hybrid(h) => {
                let model = h.clone().into_model()?;
                let (x, y) = dataset_tensor(data)?;
                model.evaluate(&x, &y)
            }
        }
    }
}

/// Trains one (architecture, layer count, seed) combination.
pub fn run_one(
    config: &ExperimentConfig,
    data: &PreparedData,
    architecture: Architecture,
    n_layers: usize,
    seed: u64,
) -> Result<RunRecord> {
    train_run(config, data, architecture, n_layers, seed).map(|(r, _)| r)
}

/// As [`run_one`], also returning the trained model.
pub fn train_run(
    config: &ExperimentConfig,
    data: &PreparedData,
    architecture: Architecture,
    n_layers: usize,
    seed: u64,
) -> Result<(RunRecord, TrainedModel)> {
    let spec = config.spec(architecture, n_layers)?;
    let train_cfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let start = Instant::now();
    match &config.cnn_pipeline {
        None => {
            let range = config.dataset.angle_range();
            let tr = Samples::from_dataset(&data.train, &range);
            let te = Samples::from_dataset(&data.test, &range);
            let (params, history) = train_with_test(&spec, &tr, Some(&te), &train_cfg)?;
            let plan = build_model(&spec)?;
            let (final_loss, train) = evaluate(&plan, &params.values, &tr)?;
            let (_, test) = evaluate(&plan, &params.values, &te)?;
            let checkpoint = Checkpoint::new(&spec, &params)?;
            let record = RunRecord {
                spec,
                config: train_cfg,
                seed,
                history,
                final_loss,
                train,
                test,
                params: params.values,
                cnn_weights: None,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            Ok((record, TrainedModel::Circuit(checkpoint)))
        }
        Some(pc) => {
            let (x, y) = dataset_tensor(&data.train)?;
            let (tx, ty) = dataset_tensor(&data.test)?;
            let pipeline = CnnPipeline::new(x.h, x.c, &pc.layers()?, pc.seed)?;
            let mut model = HybridModel::new(pipeline, &spec, ModelParams::zeros(&spec), config.dataset.angle_range)?;
            let history = train_hybrid(&mut model, (&x, &y), Some((&tx, &ty)), &train_cfg)?;
            let (final_loss, train) = model.evaluate(&x, &y)?;
            let (_, test) = model.evaluate(&tx, &ty)?;
            let record = RunRecord {
                spec,
                config: train_cfg,
                seed,
                history,
                final_loss,
                train,
                test,
                params: model.params.values.clone(),
                cnn_weights: Some(model.pipeline.weights()),
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            Ok((record, TrainedModel::Hybrid(HybridCheckpoint::from_model(&model))))
        }
    }
}

/// Mean, minimum, and share strictly below the mean of final losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaCensus {
    pub mean_loss: f64,
    pub min_loss: f64,
    pub pct_below_mean: f64,
}

pub fn minima_census(losses: &[f64]) -> Result<MinimaCensus> {
    if losses.len() < 2 {
        return Err(Error::Validation("a minima census needs at least two runs".into()));
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    // Rounding in the mean must not push a loss equal to it below the mean.
    let cut = mean - 4.0 * f64::EPSILON * mean.abs();
    let below = losses.iter().filter(|&&l| l < cut).count();
    Ok(MinimaCensus {
        mean_loss: mean,
        min_loss: min,
        pct_below_mean: 100.0 * below as f64 / losses.len() as f64,
    })
}

/// Mean metrics of one (architecture, layer count) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub architecture: Architecture,
    pub n_layers: usize,
    pub runs: usize,
    pub failed: usize,
    pub train_accuracy: f64,
    pub train_precision: f64,
    pub train_recall: f64,
    pub train_f1: f64,
    pub test_accuracy: f64,
    pub test_precision: f64,
    pub test_recall: f64,
    pub test_f1: f64,
    pub mean_final_loss: f64,
    pub min_final_loss: f64,
    /// Empty when fewer than two runs succeeded.
    pub pct_below_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<SummaryRow>,
}

fn mean_of(records: &[&RunRecord], f: impl Fn(&RunRecord) -> f64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
}

pub fn summarize(sweep: &SweepConfig, records: &[RunRecord], failures: &[RunFailure]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &arch in &sweep.architectures {
        for &nl in &sweep.n_layers {
            let rs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.spec.architecture == arch && r.spec.n_layers == nl)
                .collect();
            let losses: Vec<f64> = rs.iter().map(|r| r.final_loss).collect();
            rows.push(SummaryRow {
                architecture: arch,
                n_layers: nl,
                runs: rs.len(),
                failed: failures
                    .iter()
                    .filter(|f| f.architecture == arch && f.n_layers == nl)
                    .count(),
                train_accuracy: mean_of(&rs, |r| r.train.accuracy),
                train_precision: mean_of(&rs, |r| r.train.precision),
                train_recall: mean_of(&rs, |r| r.train.recall),
                train_f1: mean_of(&rs, |r| r.train.f1),
                test_accuracy: mean_of(&rs, |r| r.test.accuracy),
                test_precision: mean_of(&rs, |r| r.test.precision),
                test_recall: mean_of(&rs, |r| r.test.recall),
                test_f1: mean_of(&rs, |r| r.test.f1),
                mean_final_loss: mean_of(&rs, |r| r.final_loss),
                min_final_loss: losses.iter().copied().fold(f64::NAN, f64::min),
                pct_below_mean: minima_census(&losses).ok().map(|c| c.pct_below_mean),
            });
        }
    }
    rows
}

/// Every (architecture, layer count, seed) run; failures are recorded and the
/// sweep continues.
pub fn compare_architectures(config: &ExperimentConfig) -> Result<Comparison> {
    compare_with_callback(config, |_| {})
}

/// As [`compare_architectures`], calling `on_run` after each successful run.
pub fn compare_with_callback<F>(config: &ExperimentConfig, on_run: F) -> Result<Comparison>
where
    F: Fn(&RunRecord) + Sync,
{
    config.validate()?;
    let data = PreparedData::new(config)?;
    let sweep = &config.sweep;
    let jobs: Vec<(Architecture, usize, u64)> = sweep
        .architectures
        .iter()
        .flat_map(|&a| {
            sweep
                .n_layers
                .iter()
                .flat_map(move |&nl| sweep.seeds.iter().map(move |&s| (a, nl, s)))
        })
        .collect();
    let run = || -> Vec<std::result::Result<RunRecord, RunFailure>> {
        jobs.par_iter()
            .map(|&(a, nl, s)| {
                run_one(config, &data, a, nl, s)
                    .inspect(|r| on_run(r))
                    .map_err(|e| RunFailure {
                        architecture: a,
                        n_layers: nl,
                        seed: s,
                        error: e.to_string(),
                    })
            })
            .collect()
    };
    let results = if sweep.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(sweep.workers)
            .build()
            .map_err(|e| Error::Configuration(e.to_string()))?
            .install(run)
    } else {
        run()
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(sweep, &records, &failures);
    Ok(Comparison {
        records,
        failures,
        summary,
    })
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Per-run metric samples in long form: one row per run and split.
pub fn write_metric_samples_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "architecture",
        "n_layers",
        "seed",
        "split",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "final_loss",
    ])?;
    for r in records {
        for (split, m) in [("train", &r.train), ("test", &r.test)] {
            w.write_record(&[
                r.spec.architecture.to_string(),
                r.spec.n_layers.to_string(),
                r.seed.to_string(),
                split.to_string(),
                m.accuracy.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                r.final_loss.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Loss curves per (architecture, layer count): mean, minimum, and maximum
/// over seeds at each epoch.
pub fn write_loss_curves_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["architecture", "n_layers", "epoch", "mean_loss", "min_loss", "max_loss"])?;
    let mut keys: Vec<(Architecture, usize)> = Vec::new();
    for r in records {
        let k = (r.spec.architecture, r.spec.n_layers);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (arch, nl) in keys {
        let rs: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.spec.architecture == arch && r.spec.n_layers == nl)
            .collect();
        let epochs = rs.iter().map(|r| r.history.len()).min().unwrap_or(0);
        for e in 0..epochs {
            let v: Vec<f64> = rs.iter().map(|r| r.history.epochs[e].loss).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record(&[
                arch.to_string(),
                nl.to_string(),
                e.to_string(),
                mean.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A grayscale image with pixels uniform on `[0, 255)`.
pub fn random_gray_image(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * n).map(|_| rng.random_range(0.0..255.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub architecture: Architecture,
    pub stats: LandscapeStats,
}

/// Loss landscape statistics of every architecture at one labeled point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub n: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub pixels: Vec<f64>,
    pub label: f64,
    pub angle_range: [f64; 2],
    pub rows: Vec<LandscapeRow>,
}

impl LandscapeReport {
    pub fn row(&self, a: Architecture) -> Option<&LandscapeStats> {
        self.rows.iter().find(|r| r.architecture == a).map(|r| &r.stats)
    }
}

pub fn landscape_report(
    n: usize,
    n_layers: usize,
    pixels: Vec<f64>,
    label: f64,
    angle_range: [f64; 2],
    n_samples: usize,
    seed: u64,
) -> Result<LandscapeReport> {
    if pixels.len() != n * n {
        return Err(Error::Shape(format!("{} pixels for a {n}x{n} image", pixels.len())));
    }
    let range = AngleRange {
        lo: angle_range[0],
        hi: angle_range[1],
    };
    let x: Vec<f64> = pixels.iter().map(|&p| range.map(p)).collect();
    let rows = Architecture::ALL
        .iter()
        .map(|&a| {
            Ok(LandscapeRow {
                architecture: a,
                stats: landscape_stats(&ModelSpec::new(a, n, n_layers), &x, label, n_samples, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LandscapeReport {
        n,
        n_layers,
        seed,
        pixels,
        label,
        angle_range,
        rows,
    })
}

/// Largest |f(x) - f(V_g x)| seen for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub architecture: Architecture,
    pub max_delta: f64,
}

/// Orbit table, group identities, and equivariance checks at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub n: usize,
    pub orbits: OrbitTable,
    pub n_orbits: usize,
    pub expected_orbits: usize,
    /// `U_g^4 = I`.
    pub fourth_power_is_identity: bool,
    /// `U_g^3 = U_g^-1`.
    pub cube_is_inverse: bool,
    /// Max of `||U(V_g x)|0> - U_g U(x)|0>||` over samples and group elements.
    pub encoding_max_deviation: f64,
    /// Equivariant variational block at random angles.
    pub block: EquivarianceReport,
    pub invariance: Vec<InvarianceRow>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs the symmetry suite on `samples` random images and parameter draws.
pub fn symmetry_report(n: usize, n_layers: usize, samples: usize, seed: u64) -> Result<SymmetryReport> {
    let tolerance = 1e-9;
    let orbits = compute_orbits(n)?;
    let rep = build_group_rep(n)?;
    let nq = n * n;
    let g = rep.generator();
    let fourth = g.then(g).then(g).then(g).is_identity();
    let cube = rep.power(3) == &g.inverse();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoding = encoding_layer(n);
    let mut enc_dev: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..nq).map(|_| rng.random_range(0.0..TAU)).collect();
        let ux = simulate(nq, &encoding, &[], &x)?;
        for t in 1..4 {
            let lhs = simulate(nq, &encoding, &[], &rotate_flat(&x, n, t)?)?;
            let rhs = permute_qubits(&ux, rep.power(t))?;
            enc_dev = enc_dev.max(lhs.distance(&rhs));
        }
    }

    let angles: Vec<AngleSource> = (0..3 * orbits.n_orbits())
        .map(|_| AngleSource::Fixed(rng.random_range(0.0..TAU)))
        .collect();
    let block = verify_equivariance(
        &equivariant_block(&orbits, &angles)?,
        &rep,
        &VerifyOptions {
            n_states: samples.clamp(1, 8),
            seed,
            tolerance,
        },
    )?;

    let mut invariance = Vec::new();
    for arch in [Architecture::Equivariant, Architecture::NonEquivariant, Architecture::BasicEntangler] {
        let spec = ModelSpec::new(arch, n, n_layers);
        if spec.validate().is_err() {
            continue;
        }
        let plan = build_model(&spec)?;
        let mut max_delta: f64 = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..nq).map(|_| rng.random_range(0.0..TAU)).collect();
            let theta: Vec<f64> = (0..plan.n_params()).map(|_| rng.random_range(0.0..TAU)).collect();
            let t = rng.random_range(1..4);
            let d = plan.forward(&theta, &x)? - plan.forward(&theta, &rotate_flat(&x, n, t)?)?;
            max_delta = max_delta.max(d.abs());
        }
        invariance.push(InvarianceRow {
            architecture: arch,
            max_delta,
        });
    }
    let eq_ok = invariance
        .iter()
        .filter(|r| r.architecture == Architecture::Equivariant)
        .all(|r| r.max_delta < tolerance);
    let expected_orbits = orbit_count(n);
    let passed = fourth
        && cube
        && orbits.n_orbits() == expected_orbits
        && enc_dev < tolerance
        && block.equivariant
        && eq_ok;
    Ok(SymmetryReport {
        n,
        n_orbits: orbits.n_orbits(),
        orbits,
        expected_orbits,
        fourth_power_is_identity: fourth,
        cube_is_inverse: cube,
        encoding_max_deviation: enc_dev,
        block,
        invariance,
        tolerance,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig {
                noise_copies: 0,
                resolution: 4,
                ..DatasetConfig::tetromino()
            },
            model: ModelConfig::default(),
            cnn_pipeline: None,
            train: TrainConfig {
                max_epochs: 1,
                ..TrainConfig::default()
            },
            sweep: SweepConfig {
                architectures: vec![Architecture::Equivariant, Architecture::BasicEntangler],
                seeds: vec![0],
                n_layers: vec![1],
                workers: 1,
            },
        }
    }

    #[test]
    fn census_examples() {
        let c = minima_census(&[0.2, 0.4, 0.6]).unwrap();
        assert!((c.mean_loss - 0.4).abs() < 1e-15);
        assert_eq!(c.min_loss, 0.2);
        assert!((c.pct_below_mean - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(minima_census(&[0.5; 4]).unwrap().pct_below_mean, 0.0);
        assert!(minima_census(&[0.5]).is_err());
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let mut c = tiny_config();
        c.sweep.seeds.clear();
        assert!(matches!(compare_architectures(&c), Err(Error::Validation(_))));
    }

    #[test]
    fn symmetry_suite_passes() {
        for n in [2, 3, 4] {
            let r = symmetry_report(n, 2, 5, 1).unwrap();
            assert!(r.passed, "n={n}: {r:?}");
        }
    }

    #[test]
    fn config_round_trips() {
        let c = tiny_config();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}
