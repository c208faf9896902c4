//! Mini-batch AdamW training on surface MAE.
//!
//! Per-sample gradients are computed in parallel and summed in batch order,
//! so a run is bit-identical for any worker count.

use std::borrow::Cow;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{Model, ModelConfig, ObsInput};
use super::tensor::Tensor;
use crate::datagen::DatasetSample;
use crate::degrade::{RandomizationConfig, Randomizer};
use crate::error::{HelioError, Result};
use crate::rng::{self, domain};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Pass every training sample through the randomizer before use.
    pub randomize: bool,
    pub randomization: RandomizationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_gamma: 0.995,
            weight_decay: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            randomize: true,
            randomization: RandomizationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HelioError::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(HelioError::invalid("learning_rate must be > 0 and lr_gamma in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(HelioError::invalid("Adam betas must lie in [0, 1) and eps > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(HelioError::invalid("weight_decay must be >= 0"));
        }
        self.randomization.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_gamma.powi(epoch as i32)
    }
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &[Tensor], cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        AdamW {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,val_mae,lr\n");
        for e in &self.epochs {
            let val = e.val_mae.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{},{:.8}", e.epoch, e.train_mae, val, e.lr);
        }
        out
    }
}

pub fn prepare_sample(model: &Model, sample: &DatasetSample) -> Result<Vec<ObsInput>> {
    sample
        .observations
        .iter()
        .map(|o| model.prepare(o, sample.heliostat.position))
        .collect()
}

/// Mean eval-mode MAE over samples.
pub fn mean_loss(model: &Model, samples: &[DatasetSample]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(&prepare_sample(model, s)?, &s.truth))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Called after every epoch with the record just appended.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord);

pub fn train(
    train_set: &[DatasetSample],
    val_set: &[DatasetSample],
    model_config: ModelConfig,
    config: &TrainConfig,
    seed: u64,
    mut hook: Option<EpochHook>,
) -> Result<(Model, History)> {
    if train_set.is_empty() {
        return Err(HelioError::invalid("training split is empty"));
    }
    config.validate()?;
    let mut model = Model::new(model_config, &mut rng::stream(seed, domain::INIT, 0))?;
    log::info!("model has {} parameters", model.parameter_count());
    let randomizer = if config.randomize {
        Some(Randomizer::new(config.randomization.clone())?)
    } else {
        None
    };
    let mut opt = AdamW::new(&model.params, config);
    let mut history = History::default();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle = rng::stream(seed, domain::TRAIN, epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.random_range(0..=i));
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&idx| {
                    let key = ((epoch as u64) << 32) | idx as u64;
                    let sample = match &randomizer {
                        Some(r) => Cow::Owned(r.randomize(&train_set[idx], &mut rng::stream(seed, domain::DEGRADE, key))?),
                        None => Cow::Borrowed(&train_set[idx]),
                    };
                    let inputs = prepare_sample(&model, &sample)?;
                    let mut drop_rng = rng::stream(seed, domain::TRAIN, key | 1 << 63);
                    model.loss_and_grad(&inputs, &sample.truth, Some(&mut drop_rng))
                })
                .collect::<Result<_>>()?;
            let mut grads: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(HelioError::Diverged(format!("non-finite loss {loss} in epoch {epoch}")));
                }
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi);
                }
            }
            let inv = 1.0 / results.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(inv));
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(HelioError::Diverged(format!("non-finite gradient in epoch {epoch}")));
            }
            opt.step(&mut model.params, &grads, lr);
        }
        let train_mae = loss_sum / train_set.len() as f64;
        let val_mae = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&model, val_set)?)
        };
        let rec = EpochRecord {
            epoch,
            train_mae,
            val_mae,
            lr,
        };
        log::info!(
            "epoch {epoch}: train MAE {train_mae:.4} mm, val MAE {} mm, lr {lr:.6}",
            val_mae.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
        if let Some(h) = hook.as_mut() {
            h(&rec);
        }
        history.epochs.push(rec);
    }
    Ok((model, history))
}
