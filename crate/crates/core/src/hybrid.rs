//! Classical equivariant convolutions feeding the quantum classifier, trained
//! jointly.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::circuits::{build_model, CircuitPlan, ModelParams, ModelSpec, CHECKPOINT_FORMAT};
use crate::cnn::{CnnPipeline, FeatureScaler, Tensor4};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{classify, compute_metrics, MetricsReport};
use crate::training::{adam_step, init_params, mse_loss, AdamState, EpochRecord, TrainConfig, TrainHistory};

/// Images as a `(N, side, side, C)` tensor with values divided by 255, plus labels.
pub fn dataset_tensor(d: &Dataset) -> Result<(Tensor4, Vec<f64>)> {
    d.validate_for_training()?;
    let first = &d.items[0];
    let data: Vec<f64> = d
        .items
        .iter()
        .flat_map(|x| x.pixels.iter().map(|p| p / 255.0))
        .collect();
    let labels = d.items.iter().map(|x| f64::from(x.label)).collect();
    Ok((Tensor4::new(d.len(), first.side, first.side, first.channels, data)?, labels))
}

fn subset(x: &Tensor4, idx: &[usize]) -> Tensor4 {
    let mut data = Vec::with_capacity(idx.len() * x.h * x.w * x.c);
    for &s in idx {
        data.extend_from_slice(x.sample(s));
    }
    Tensor4 {
        n: idx.len(),
        data,
        ..x.clone()
    }
}

pub struct HybridModel {
    pub pipeline: CnnPipeline,
    /// Fitted on the first forward pass over the training set, then frozen.
    pub scaler: Option<FeatureScaler>,
    pub params: ModelParams,
    pub angle_range: [f64; 2],
    plan: CircuitPlan,
}

/// Loss and gradients of one hybrid batch.
#[derive(Debug, Clone)]
pub struct HybridGradient {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub weights: Vec<f64>,
    pub params: Vec<f64>,
}

impl HybridModel {
    pub fn new(pipeline: CnnPipeline, spec: &ModelSpec, params: ModelParams, angle_range: [f64; 2]) -> Result<Self> {
        let plan = build_model(spec)?;
        let (side, ch) = pipeline.output_shape();
        if side != spec.n || ch != 1 {
            return Err(Error::Shape(format!(
                "pipeline ends at {side}x{side}x{ch}, the circuit takes {n}x{n}x1",
                n = spec.n
            )));
        }
        if params.values.len() != plan.n_params() {
            return Err(Error::Configuration(format!(
                "{} parameters for a model with {}",
                params.values.len(),
                plan.n_params()
            )));
        }
        Ok(Self {
            pipeline,
            scaler: None,
            params,
            angle_range,
            plan,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.plan.spec()
    }

    fn side(&self) -> usize {
        self.plan.spec().n
    }

    fn flatten(&self, y: &Tensor4) -> Vec<Vec<f64>> {
        (0..y.n).map(|s| y.sample(s).to_vec()).collect()
    }

    /// Fits the latent-feature scaler on `x` with the current filters.
    pub fn fit_scaler(&mut self, x: &Tensor4) -> Result<()> {
        let latent = self.flatten(&self.pipeline.apply(x)?);
        self.scaler = Some(FeatureScaler::fit(&latent, self.side(), self.angle_range)?);
        Ok(())
    }

    fn scaler(&self) -> Result<&FeatureScaler> {
        self.scaler
            .as_ref()
            .ok_or_else(|| Error::State("feature scaler has not been fitted".into()))
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Vec<f64>> {
        let scaler = self.scaler()?;
        self.flatten(&self.pipeline.apply(x)?)
            .iter()
            .map(|z| self.plan.forward(&self.params.values, &scaler.apply(z)))
            .collect()
    }

    pub fn loss_gradient(&mut self, x: &Tensor4, labels: &[f64]) -> Result<HybridGradient> {
        if x.n == 0 || x.n != labels.len() {
            return Err(Error::Validation(format!("{} samples for {} labels", x.n, labels.len())));
        }
        let y = self.pipeline.forward(x)?;
        let scaler = self.scaler()?.clone();
        let slope = scaler.slope();
        let nf = x.n as f64;
        let mut up = Tensor4::zeros(y.n, y.h, y.w, y.c);
        let mut gp = vec![0.0; self.params.values.len()];
        let mut preds = Vec::with_capacity(x.n);
        let mut loss = 0.0;
        for (s, z) in self.flatten(&y).iter().enumerate() {
            let g = self.plan.gradient(&self.params.values, &scaler.apply(z))?;
            let r = g.value - labels[s];
            loss += r * r;
            let c = 2.0 * r / nf;
            for (t, d) in gp.iter_mut().zip(&g.params) {
                *t += c * d;
            }
            let base = s * z.len();
            for (k, d) in g.inputs.iter().enumerate() {
                up.data[base + k] = c * d * slope[k];
            }
            preds.push(g.value);
        }
        let (filters, _) = self.pipeline.backward(&up)?;
        Ok(HybridGradient {
            loss: loss / nf,
            predictions: preds,
            weights: filters.into_iter().flat_map(|f| f.data).collect(),
            params: gp,
        })
    }

    pub fn evaluate(&self, x: &Tensor4, labels: &[f64]) -> Result<(f64, MetricsReport)> {
        let preds = self.forward(x)?;
        Ok((mse_loss(&preds, labels)?, compute_metrics(&classify(&preds), labels)?))
    }
}

/// Joint Adam over filters and circuit parameters. Circuit parameters start
/// from the config's seeded init range; filters keep their initialization.
pub fn train_hybrid(
    model: &mut HybridModel,
    train: (&Tensor4, &[f64]),
    test: Option<(&Tensor4, &[f64])>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let (x, labels) = train;
    if x.n == 0 {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    model.params = init_params(model.spec(), config, &mut rng);
    model.fit_scaler(x)?;
    let nw = model.pipeline.n_weights();
    let mut theta: Vec<f64> = model.pipeline.weights();
    theta.extend(&model.params.values);
    let mut adam = AdamState::new(theta.len());
    let batch = if config.batch_size == 0 { x.n } else { config.batch_size.min(x.n) };
    let mut order: Vec<usize> = (0..x.n).collect();
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for epoch in 0..config.max_epochs {
        if batch < x.n {
            order.shuffle(&mut rng);
        }
        let (mut preds, mut seen, mut sq) = (Vec::new(), Vec::new(), 0.0);
        for chunk in order.chunks(batch) {
            let xb = subset(x, chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let g = model.loss_gradient(&xb, &yb)?;
            if !g.loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            let mut grad = g.weights;
            grad.extend(g.params);
            adam_step(&mut adam, &mut theta, &grad, config.learning_rate)?;
            model.pipeline.set_weights(&theta[..nw])?;
            model.params.values.copy_from_slice(&theta[nw..]);
            sq += g.loss * yb.len() as f64;
            preds.extend(g.predictions);
            seen.extend(yb);
        }
        let last = epoch + 1 == config.max_epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let test_metrics = match test {
            Some((tx, ty)) if last || due => Some(model.evaluate(tx, ty)?.1),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: sq / x.n as f64,
            train: compute_metrics(&classify(&preds), &seen)?,
            test: test_metrics,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    model.pipeline.clear_cache();
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridCheckpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub pipeline: CnnPipeline,
    pub scaler: Option<FeatureScaler>,
    pub angle_range: [f64; 2],
}

impl HybridCheckpoint {
    pub fn from_model(m: &HybridModel) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            spec: m.spec().clone(),
            params: m.params.values.clone(),
            pipeline: m.pipeline.clone(),
            scaler: m.scaler.clone(),
            angle_range: m.angle_range,
        }
    }

    pub fn into_model(self) -> Result<HybridModel> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "checkpoint format {} is not {CHECKPOINT_FORMAT}",
                self.format_version
            )));
        }
        let mut m = HybridModel::new(
            self.pipeline,
            &self.spec,
            ModelParams { values: self.params },
            self.angle_range,
        )?;
        m.scaler = self.scaler;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::Architecture;
    use crate::cnn::LayerSpec;

    fn small() -> HybridModel {
        let p = CnnPipeline::new(6, 1, &[LayerSpec::new(3, 2, None), LayerSpec::new(1, 1, None)], 3).unwrap();
        let spec = ModelSpec::new(Architecture::Equivariant, 4, 1);
        let params = ModelParams {
            values: (0..12).map(|k| 0.2 + 0.3 * k as f64).collect(),
        };
        HybridModel::new(p, &spec, params, [0.0, std::f64::consts::PI]).unwrap()
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = CnnPipeline::new(6, 1, &[LayerSpec::new(2, 1, None)], 0).unwrap();
        let spec = ModelSpec::new(Architecture::Equivariant, 4, 1);
        assert!(HybridModel::new(p, &spec, ModelParams::zeros(&spec), [0.0, 1.0]).is_err());
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut m = small();
        let x = Tensor4::new(2, 6, 6, 1, (0..72).map(|k| ((k * 37) % 11) as f64 / 11.0).collect()).unwrap();
        let y = [1.0, -1.0];
        m.fit_scaler(&x).unwrap();
        let g = m.loss_gradient(&x, &y).unwrap();
        let w0 = m.pipeline.weights();
        let h = 1e-6;
        for k in [0, 5, 17, w0.len() - 1] {
            let mut w = w0.clone();
            w[k] += h;
            m.pipeline.set_weights(&w).unwrap();
            let a = mse_loss(&m.forward(&x).unwrap(), &y).unwrap();
            w[k] -= 2.0 * h;
            m.pipeline.set_weights(&w).unwrap();
            let b = mse_loss(&m.forward(&x).unwrap(), &y).unwrap();
            let fd = (a - b) / (2.0 * h);
            assert!((fd - g.weights[k]).abs() < 1e-6 * g.weights[k].abs().max(1.0), "weight {k}: {fd} vs {}", g.weights[k]);
        }
    }
}
