use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::NetworkParams;
use super::objective::{grad_total_loss, Sample, SeparationScale};
use crate::error::{Error, Result};

/// Optimizer and schedule settings for autoencoder training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight `η` of the separation term.
    pub eta: f64,
    pub separation: SeparationScale,
    /// Apply latent dropout during gradient steps.
    pub train_dropout: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 200,
            eta: 0.1,
            separation: SeparationScale::Normalized,
            train_dropout: false,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("separation weight {}", self.eta)));
        }
        Ok(())
    }
}

/// Adam moment estimates plus the seeded stream used for shuffling and
/// dropout masks.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new(n_params: usize, seed: u64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
        }
    }
}

/// Per-batch loss components of one epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub recon: Vec<f64>,
    pub separation: Vec<f64>,
}

impl EpochLosses {
    pub fn mean_recon(&self) -> f64 {
        mean(&self.recon)
    }

    pub fn mean_separation(&self) -> f64 {
        mean(&self.separation)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One shuffled pass over `samples` with an Adam step per mini-batch.
pub fn train_epoch(
    samples: &[Sample<'_>],
    params: &mut NetworkParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochLosses> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut opt.rng);
    let mut losses = EpochLosses::default();
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
        let dropout = cfg.train_dropout.then_some(&mut opt.rng);
        let lg = match grad_total_loss(params, &batch, cfg.eta, cfg.separation, dropout) {
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                })
            }
            other => other?,
        };
        if !lg.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: b,
                loss: lg.total,
            });
        }
        opt.apply(&mut params.data, &lg.grad, cfg);
        if let Some(i) = params.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: params.layout().name_of(i).into(),
            });
        }
        losses.recon.push(lg.recon_loss);
        losses.separation.push(lg.separation);
    }
    Ok(losses)
}
