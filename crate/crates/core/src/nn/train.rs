//! Mini-batch training with Adam and the plateau schedule.
//!
//! Every random choice is addressed by the run seed: the epoch's shuffle by
//! `(seed, epoch)`, each sample's augmentation and dropout mask by
//! `(seed, epoch, sample index)`. Per-sample gradients may be computed on any
//! number of rayon workers; they are summed in batch order, so the result is
//! bit-identical regardless of worker count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::dropout_mask;
use super::model::{backward, forward, Head, Model, TargetScaling};
use super::optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
use crate::error::{config_err, Result};
use crate::imageops::{augment, AugmentSpec, GrayImage};
use crate::ridge::{self, LinearFit, RidgeOptions, RidgeProblem};
use crate::rng;

const SHUFFLE_STREAM: u64 = 1 << 40;
const SAMPLE_STREAM: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub plateau: PlateauConfig,
    /// Ridge penalty on the head weights (ridge-layer head only).
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub augment: AugmentSpec,
    /// Standardise targets through the model's target scaling before training.
    #[serde(default = "yes")]
    pub normalize_targets: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// The full-scale protocol: 160 epochs, batch 32, Adam at 1e-4, rate x0.8
    /// after 3 flat epochs, lambda 1e-4, flips, shifts, rotation, zoom and
    /// brightness augmentation.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            epochs: 160,
            batch_size: 32,
            lr: 1e-4,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            lambda: 1e-4,
            seed,
            augment: AugmentSpec {
                flip_h: 0.5,
                flip_v: 0.5,
                max_shift: 0.1,
                max_rotate: 20.0,
                brightness_range: (0.8, 1.2),
                zoom_range: (0.9, 1.1),
            },
            normalize_targets: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be finite and non-negative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config_err!("lambda must be finite and non-negative"));
        }
        self.plateau.validate()?;
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    /// Months.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// CSV with columns `epoch,train_mse,val_mse,train_mae,val_mae,lr`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_mse,val_mse,train_mae,val_mae,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.train_mse,
                opt(r.val_mse),
                r.train_mae,
                opt(r.val_mae),
                r.lr
            ));
        }
        out
    }
}

/// `(MSE, MAE)` in months over the samples, inference mode.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<(f64, f64)> {
    let preds = predict_all(model, samples)?;
    let n = samples.len().max(1) as f64;
    let (se, ae) = preds.iter().zip(samples).fold((0.0, 0.0), |(se, ae), (p, s)| {
        let d = p - s.target;
        (se + d * d, ae + d.abs())
    });
    Ok((se / n, ae / n))
}

pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| super::model::predict(model, &s.image))
        .collect()
}

/// Dense-layer activations (the head's input) with dropout off.
pub fn extract_features(model: &Model, images: &[&GrayImage]) -> Result<Vec<Vec<f64>>> {
    images
        .par_iter()
        .map(|img| Ok(forward(model, &model.input_tensor(img)?, None)?.features))
        .collect()
}

pub fn train(mut model: Model, train_set: &[Sample], val_set: &[Sample], config: &TrainConfig) -> Result<(Model, History)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(config_err!("training set is empty"));
    }
    if config.normalize_targets {
        model.set_target_scaling(target_scaling(train_set))?;
    }
    let ridge_head = model.spec().head == Head::RidgeLayer;
    let head_range = model.head_weight_range();
    let rate = model.spec().dropout_rate;
    let width = model.spec().dense_width;
    let scale = model.spec().target.scale;
    let offset = model.spec().target.offset;

    let mut adam = AdamState::new(model.param_count());
    let mut schedule = PlateauScheduler::new(config.lr, config.plateau)?;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let lr = schedule.lr();
        order.shuffle(&mut rng::derive(config.seed, SHUFFLE_STREAM, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let m = batch.len() as f64;
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let mut r = rng::derive(config.seed, SAMPLE_STREAM | epoch as u64, i as u64);
                    let sample = &train_set[i];
                    let image = augment(&sample.image, &config.augment, &mut r);
                    let mask = dropout_mask(width, rate, &mut r)?;
                    let cache = forward(&model, &model.input_tensor(&image)?, Some(&mask))?;
                    // d/d(raw) of mean squared error in standardised units
                    let target = (sample.target - offset) / scale;
                    let d_raw = 2.0 * (cache.raw_output - target) / m;
                    Ok(backward(&model, &cache, d_raw / scale)?.params)
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let mut grads = vec![0.0; model.param_count()];
            for g in &per_sample {
                for (a, b) in grads.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if ridge_head {
                let penalty = ridge::penalty_gradient(&model.params()[head_range.clone()], config.lambda);
                for (a, b) in grads[head_range.clone()].iter_mut().zip(&penalty) {
                    *a += b;
                }
            }
            adam_step(model.params_mut(), &grads, &mut adam, lr, &config.adam)?;
        }

        let (train_mse, train_mae) = evaluate(&model, train_set)?;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set)?)
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_mse,
            val_mse: val.map(|v| v.0),
            train_mae,
            val_mae: val.map(|v| v.1),
            lr,
        });
        schedule.step(val.map_or(train_mse, |v| v.0));
    }
    Ok((model, history))
}

fn target_scaling(samples: &[Sample]) -> TargetScaling {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.target).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.target - mean).powi(2)).sum::<f64>() / n;
    TargetScaling {
        offset: mean,
        scale: if var > 0.0 { var.sqrt() } else { 1.0 },
    }
}

/// Replaces the head with a closed-form ridge fit on frozen dense features.
/// The intercept is unpenalised.
pub fn fit_ridge_head(model: &mut Model, samples: &[Sample], lambda: f64, standardize: bool) -> Result<LinearFit> {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let features = extract_features(model, &images)?;
    let y: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let problem = RidgeProblem::new(&features, &y, lambda)?;
    let fit = ridge::fit_linear(&problem, RidgeOptions { intercept: true, standardize })?;
    model.set_head(&fit.coefficients, fit.intercept)?;
    Ok(fit)
}
