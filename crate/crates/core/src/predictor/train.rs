//! Seeded minibatch training with Adam, and finite-difference verification
//! of the analytic gradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::PoseFeature;
use super::network::{PredictorModel, FEATURES};
use super::{build_input, build_target};
use crate::error::{Error, Result};
use crate::history::PoseHistory;

/// One supervised example: encoded past window and encoded future window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub input: Vec<PoseFeature>,
    pub target: Vec<PoseFeature>,
}

/// Cuts a pose log into training windows, one every `stride` frames.
pub fn windows_from_history(
    history: &PoseHistory,
    input_frames: usize,
    output_frames: usize,
    frequency: f64,
    stride: usize,
) -> Result<Vec<Window>> {
    let (Some(first), Some(last)) = (history.first(), history.latest()) else {
        return Err(Error::Schema("pose log is empty".into()));
    };
    let period = 1.0 / frequency;
    let start = first.time + input_frames as f64 * period;
    let end = last.time - output_frames as f64 * period;
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t0 = start + (k * stride.max(1)) as f64 * period;
        if t0 > end + 1e-9 {
            break;
        }
        let input = build_input(history, t0, input_frames, frequency)?.encode()?;
        let target = build_target(history, t0, output_frames, frequency)?.encode()?;
        out.push(Window { input, target });
        k += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Learning rate at the last epoch as a fraction of the initial one;
    /// the rate decays geometrically in between.
    pub final_lr_fraction: f64,
    /// Rescale inputs and outputs by their per-dimension RMS before training.
    pub fit_normalization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            validation_fraction: 0.1,
            final_lr_fraction: 0.01,
            fit_normalization: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training-set loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    /// Training-set loss of the returned parameters.
    pub final_loss: f64,
}

impl TrainReport {
    /// Best training loss seen up to each epoch.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = self.initial_loss;
        self.epochs
            .iter()
            .map(|e| {
                best = best.min(e.train_loss);
                best
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "learning_rate", "train_loss", "validation_loss"])?;
        w.write_record(["0".to_string(), String::new(), self.initial_loss.to_string(), String::new()])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.learning_rate.to_string(),
                e.train_loss.to_string(),
                e.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rms_scale(values: impl Iterator<Item = PoseFeature>) -> PoseFeature {
    let mut sum = [0.0; FEATURES];
    let mut n = 0usize;
    for f in values {
        for k in 0..FEATURES {
            sum[k] += f[k] * f[k];
        }
        n += 1;
    }
    let mut out = [1.0; FEATURES];
    for k in 0..FEATURES {
        let rms = (sum[k] / n.max(1) as f64).sqrt();
        if rms > 1e-9 {
            out[k] = rms;
        }
    }
    out
}

fn mean_loss(model: &PredictorModel, windows: &[Window]) -> Result<f64> {
    let losses = windows
        .par_iter()
        .map(|w| model.loss(&w.input, &w.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Trains `model` in place and returns the loss history. The parameters
/// with the lowest end-of-epoch training loss are kept.
pub fn train(model: &mut PredictorModel, dataset: &[Window], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Schema("training dataset is empty".into()));
    }
    for w in dataset {
        if w.input.len() != model.config.input_frames || w.target.len() != model.config.output_frames {
            return Err(Error::DimensionMismatch {
                expected: model.config.input_frames,
                got: w.input.len(),
            });
        }
    }
    if cfg.epochs == 0 {
        let loss = mean_loss(model, dataset)?;
        return Ok(TrainReport {
            initial_loss: loss,
            epochs: Vec::new(),
            best_epoch: 0,
            final_loss: loss,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<Window> = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let val_set: Vec<Window> = val_idx.iter().map(|&i| dataset[i].clone()).collect();

    if cfg.fit_normalization {
        model.input_scale = rms_scale(train_set.iter().flat_map(|w| w.input.iter().copied()));
        model.output_scale = rms_scale(train_set.iter().flat_map(|w| w.target.iter().copied()));
    }

    let initial_loss = mean_loss(model, &train_set)?;
    let mut best = (initial_loss, 0usize, model.params.clone());
    let mut adam = Adam::new(model.params.len());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    let decay = if cfg.epochs > 1 {
        cfg.final_lr_fraction.powf(1.0 / (cfg.epochs - 1) as f64)
    } else {
        1.0
    };

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate * decay.powi(epoch as i32 - 1);
        idx.shuffle(&mut rng);
        for batch in idx.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&train_set[i].input, &train_set[i].target).map(|(_, g)| g))
                .collect::<Result<Vec<_>>>()?;
            let mut total = vec![0.0; model.params.len()];
            for g in &grads {
                for (t, gi) in total.iter_mut().zip(g) {
                    *t += gi;
                }
            }
            let scale = 1.0 / grads.len() as f64;
            total.iter_mut().for_each(|t| *t *= scale);
            adam.step(&mut model.params, &total, lr);
        }
        let train_loss = mean_loss(model, &train_set)?;
        let validation_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(model, &val_set)?)
        };
        if train_loss < best.0 {
            best = (train_loss, epoch, model.params.clone());
        }
        epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss,
            validation_loss,
        });
    }
    model.params = best.2;
    Ok(TrainReport {
        initial_loss,
        epochs,
        best_epoch: best.1,
        final_loss: best.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    /// Worst relative error per named tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Step for the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this in both estimates are compared absolutely.
const FD_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient against central finite differences on
/// every parameter.
pub fn gradient_check(
    model: &PredictorModel,
    input: &[PoseFeature],
    target: &[PoseFeature],
) -> Result<GradientReport> {
    let (_, analytic) = model.loss_and_grad(input, target)?;
    let mut probe = model.clone();
    let mut numeric = vec![0.0; analytic.len()];
    for i in 0..numeric.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let up = probe.loss(input, target)?;
        probe.params[i] = orig - FD_STEP;
        let down = probe.loss(input, target)?;
        probe.params[i] = orig;
        numeric[i] = (up - down) / (2.0 * FD_STEP);
    }
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
    let per_tensor: Vec<(String, f64)> = model
        .config
        .layout()
        .into_iter()
        .map(|t| {
            let worst = (t.offset..t.offset + t.len)
                .map(|i| rel(analytic[i], numeric[i]))
                .fold(0.0, f64::max);
            (t.name, worst)
        })
        .collect();
    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradientReport {
        max_relative_error,
        per_tensor,
        analytic,
        numeric,
    })
}
