//! Minibatch training with Adam and global-norm clipping.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{evaluate as evaluate_loss, DropoutMasks, Prepared, Variant};
use super::params::{EncoderConfig, Gradients, ModelParams};
use crate::decode::{infer, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics, PredictionRecord};
use crate::reasoner::Example;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub dropout: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            dropout: 0.0,
            variant: Variant::Base,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let mut k = 0;
        for slice in params.slices_mut() {
            for p in slice.iter_mut() {
                let g = grad[k];
                let m = &mut self.first[k];
                let v = &mut self.second[k];
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub dev: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub optimizer: Adam,
    /// Epoch whose parameters were kept, 0 for the initial ones.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Decodes every example and scores the predictions.
pub fn predict_and_evaluate(params: &ModelParams, examples: &[Example], decode: &DecodeConfig) -> Result<Metrics> {
    let preds = predict_all(params, examples, decode)?;
    evaluate(&preds, examples)
}

pub fn predict_all(params: &ModelParams, examples: &[Example], decode: &DecodeConfig) -> Result<Vec<PredictionRecord>> {
    examples
        .par_iter()
        .map(|ex| {
            let p = infer(params, &ex.theory, &ex.query, decode)?;
            Ok(PredictionRecord {
                id: ex.id.clone(),
                answer: p.answer,
                proof: p.proof,
            })
        })
        .collect()
}

fn dropout_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index as u64);
    rng
}

/// Trains from `ModelParams::init(encoder)`. Keeps the parameters with the
/// best dev full accuracy; with an empty dev set the last epoch is kept.
pub fn train(train_set: &[Example], dev_set: &[Example], cfg: &TrainConfig, encoder: EncoderConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = ModelParams::init(encoder)?;
    let prepared: Vec<Prepared> = train_set
        .iter()
        .map(|ex| Prepared::new(&params, ex))
        .collect::<Result<_>>()?;
    let decode = DecodeConfig::default();
    let mut optimizer = Adam::new(params.len());
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let step = optimizer.step;
            let results: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let p = &prepared[idx];
                    let masks = (cfg.dropout > 0.0).then(|| {
                        let mut rng = dropout_rng(cfg.seed, step, pos);
                        DropoutMasks::sample(cfg.dropout, p.feats.m(), params.config().rep_dim(), &mut rng)
                    });
                    evaluate_loss(&params, p, cfg.variant, masks.as_ref(), true)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = Gradients::zeros_like(&params);
            for (terms, g) in &results {
                loss_sum += terms.total();
                grad.add_scaled(g.as_ref().expect("gradient requested"), scale);
            }
            let norm = grad.norm();
            if norm > cfg.grad_clip {
                grad.scale(cfg.grad_clip / norm);
            }
            norm_sum += norm;
            batches += 1;
            let flat = grad.to_flat(&params);
            optimizer.update(&mut params, &flat, cfg.learning_rate);
        }
        let train_loss = loss_sum / prepared.len() as f64;
        let dev = if dev_set.is_empty() {
            None
        } else {
            Some(predict_and_evaluate(&params, dev_set, &decode)?)
        };
        match &dev {
            Some(m) => info!(
                "epoch {epoch}: loss {train_loss:.4} dev qa {:.4} pa {:.4} fa {:.4}",
                m.qa, m.pa, m.fa
            ),
            None => info!("epoch {epoch}: loss {train_loss:.4}"),
        }
        debug!("epoch {epoch}: mean grad norm {:.4}", norm_sum / batches as f64);
        let score = dev.as_ref().map_or(f64::NEG_INFINITY, |m| m.fa);
        if dev.is_none() || best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            grad_norm: norm_sum / batches as f64,
            dev,
        });
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params),
    };
    Ok(TrainOutput {
        params,
        optimizer,
        best_epoch,
        log,
    })
}
