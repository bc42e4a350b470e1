//! Loss, gradients, Adam, the training loop, and landscape statistics.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{build_model, CircuitPlan, ModelParams, ModelSpec};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::metrics::{classify, compute_metrics, MetricsReport};
use crate::statevector::parameter_shift_gradient;

/// `(1/N) sum (f_i - y_i)^2`.
pub fn mse_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_batch(preds.len(), labels.len())?;
    let s: f64 = preds.iter().zip(labels).map(|(f, y)| (f - y) * (f - y)).sum();
    Ok(s / preds.len() as f64)
}

fn check_batch(n: usize, labels: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    if n != labels {
        return Err(Error::Validation(format!("{n} samples for {labels} labels")));
    }
    Ok(())
}

/// Model outputs for every feature vector.
pub fn predict(plan: &CircuitPlan, params: &[f64], features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features.par_iter().map(|x| plan.forward(params, x)).collect()
}

/// Loss, outputs, and loss gradient for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub grad: Vec<f64>,
}

/// `dL/dtheta = (2/N) sum (f_i - y_i) df_i/dtheta` via the adjoint backend.
///
/// Samples are evaluated in parallel and reduced in index order.
pub fn loss_gradient(
    plan: &CircuitPlan,
    params: &[f64],
    features: &[Vec<f64>],
    labels: &[f64],
) -> Result<BatchGradient> {
    check_batch(features.len(), labels.len())?;
    let per: Vec<_> = features
        .par_iter()
        .map(|x| plan.gradient(params, x))
        .collect::<Result<_>>()?;
    reduce(per.into_iter().map(|g| (g.value, g.params)), labels, params.len())
}

/// Same quantity as [`loss_gradient`] with per-sample gradients from the
/// shift rule.
pub fn parameter_shift_loss_gradient(
    plan: &CircuitPlan,
    params: &[f64],
    features: &[Vec<f64>],
    labels: &[f64],
) -> Result<BatchGradient> {
    check_batch(features.len(), labels.len())?;
    let per: Vec<_> = features
        .par_iter()
        .map(|x| parameter_shift_gradient(plan.n_qubits(), plan.gates(), plan.observable(), params, x))
        .collect::<Result<_>>()?;
    reduce(per.into_iter().map(|g| (g.value, g.params)), labels, params.len())
}

fn reduce(
    per: impl Iterator<Item = (f64, Vec<f64>)>,
    labels: &[f64],
    n_params: usize,
) -> Result<BatchGradient> {
    let n = labels.len() as f64;
    let mut grad = vec![0.0; n_params];
    let mut predictions = Vec::with_capacity(labels.len());
    let mut loss = 0.0;
    for ((f, df), &y) in per.zip(labels) {
        let r = f - y;
        loss += r * r;
        for (g, d) in grad.iter_mut().zip(&df) {
            *g += 2.0 * r * d / n;
        }
        predictions.push(f);
    }
    Ok(BatchGradient {
        loss: loss / n,
        predictions,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "adam step over {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        params[k] -= lr * (*m / c1) / ((*v / c2).sqrt() + state.epsilon);
    }
    Ok(())
}

/// Missing JSON fields take their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Parameters start uniform in `[lo, hi)`.
    pub init_range: [f64; 2],
    /// Test metrics are recorded every this many epochs and on the last one;
    /// 0 records them on the last epoch only.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 100,
            batch_size: 0,
            seed: 0,
            init_range: [0.0, TAU],
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Configuration(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Configuration("max_epochs must be at least 1".into()));
        }
        let [lo, hi] = self.init_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Configuration(format!("empty init range [{lo}, {hi})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's training samples, before that epoch's updates.
    pub loss: f64,
    /// Metrics of the predictions made during the epoch.
    pub train: MetricsReport,
    pub test: Option<MetricsReport>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

fn metric_cells(m: Option<&MetricsReport>) -> Vec<String> {
    match m {
        Some(m) => [m.accuracy, m.precision, m.recall, m.f1]
            .iter()
            .map(|v| v.to_string())
            .collect(),
        None => vec![String::new(); 4],
    }
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// Same history with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainHistory {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.wall_seconds = 0.0;
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        for split in ["train", "test"] {
            header.extend(METRIC_NAMES.iter().map(|m| format!("{split}_{m}")));
        }
        header.push("wall_seconds".into());
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), e.loss.to_string()];
            row.extend(metric_cells(Some(&e.train)));
            row.extend(metric_cells(e.test.as_ref()));
            row.push(e.wall_seconds.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn init_params(spec: &ModelSpec, config: &TrainConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let [lo, hi] = config.init_range;
    ModelParams {
        values: (0..spec.n_params()).map(|_| rng.random_range(lo..hi)).collect(),
    }
}

/// Outputs and metrics of a model on a labeled set.
pub fn evaluate(plan: &CircuitPlan, params: &[f64], data: &Samples) -> Result<(f64, MetricsReport)> {
    let preds = predict(plan, params, &data.features)?;
    let loss = mse_loss(&preds, &data.labels)?;
    Ok((loss, compute_metrics(&classify(&preds), &data.labels)?))
}

pub fn train(spec: &ModelSpec, data: &Samples, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with_test(spec, data, None, config)
}

/// Adam on the MSE loss; deterministic given the config seed.
pub fn train_with_test(
    spec: &ModelSpec,
    data: &Samples,
    test: Option<&Samples>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let plan = build_model(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(spec, config, &mut rng);
    let mut adam = AdamState::new(params.values.len());
    let batch = if config.batch_size == 0 {
        data.len()
    } else {
        config.batch_size.min(data.len())
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let start = Instant::now();

    for epoch in 0..config.max_epochs {
        if batch < data.len() {
            order.shuffle(&mut rng);
        }
        let mut preds = Vec::with_capacity(data.len());
        let mut labels = Vec::with_capacity(data.len());
        let mut sq = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.features[i].clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
            let bg = loss_gradient(&plan, &params.values, &xs, &ys)?;
            if !bg.loss.is_finite() || bg.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            adam_step(&mut adam, &mut params.values, &bg.grad, config.learning_rate)?;
            sq += bg.loss * ys.len() as f64;
            preds.extend(bg.predictions);
            labels.extend(ys);
        }
        let last = epoch + 1 == config.max_epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let test_metrics = match test {
            Some(t) if last || due => Some(evaluate(&plan, &params.values, t)?.1),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: sq / data.len() as f64,
            train: compute_metrics(&classify(&preds), &labels)?,
            test: test_metrics,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeStats {
    pub n_samples: usize,
    pub mean_loss: f64,
    pub var_loss: f64,
    /// Derivative of the loss in parameter slot 0.
    pub mean_grad: f64,
    pub var_grad: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Loss and slot-0 gradient statistics at one data point, over parameters
/// drawn uniformly from `[0, 2 pi)`. Variances are unbiased.
pub fn landscape_stats(
    spec: &ModelSpec,
    features: &[f64],
    label: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LandscapeStats> {
    if n_samples < 2 {
        return Err(Error::Validation("landscape statistics need at least 2 samples".into()));
    }
    let plan = build_model(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..plan.n_params()).map(|_| rng.random_range(0.0..TAU)).collect())
        .collect();
    let per: Vec<(f64, f64)> = draws
        .par_iter()
        .map(|theta| {
            let g = plan.gradient(theta, features)?;
            let r = g.value - label;
            Ok((r * r, 2.0 * r * g.params[0]))
        })
        .collect::<Result<_>>()?;
    let (losses, grads): (Vec<f64>, Vec<f64>) = per.into_iter().unzip();
    let (mean_loss, var_loss) = mean_var(&losses);
    let (mean_grad, var_grad) = mean_var(&grads);
    Ok(LandscapeStats {
        n_samples,
        mean_loss,
        var_loss,
        mean_grad,
        var_grad,
    })
}
