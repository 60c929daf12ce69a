//! Mini-batch Adam training with best-on-validation checkpoint selection.
//!
//! Per-sample gradients are computed in parallel and summed in sample order,
//! so results do not depend on the number of worker threads.

use polypaug_core::metrics::dice;
use polypaug_core::BinaryMask;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RefinerError, Result};
use crate::model::{Grads, Refiner, TrainSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Decoupled weight decay (AdamW); 0 gives plain Adam.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Element-wise gradient clamp.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(0.5),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mdice: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest validation mDice.
    pub model: Refiner,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
}

/// Adam moments for every parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    pub fn new(model: &Refiner) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut Refiner, grads: &Grads, s: &TrainSchedule) {
        self.t += 1;
        let bc1 = 1.0 - s.beta1.powi(self.t);
        let bc2 = 1.0 - s.beta2.powi(self.t);
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            for (j, w) in p.data.iter_mut().enumerate() {
                let mut g = grads[i][j];
                if let Some(c) = s.grad_clip {
                    g = g.clamp(-c, c);
                }
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + s.eps);
                *w -= s.learning_rate * (update + s.weight_decay * *w);
            }
        }
    }
}

fn mean_loss(model: &Refiner, samples: &[TrainSample]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss(s).map(|l| l.total))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean Dice of binarized predictions at input resolution.
pub fn evaluate_mdice(model: &Refiner, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let s = model.config().input_size;
    let scores: Vec<f64> = samples
        .par_iter()
        .map(|x| -> Result<f64> {
            let pred = model.predict_input(&x.image, &x.region)?;
            let target = BinaryMask::from_threshold(s, s, &x.target, 0.5)?;
            Ok(dice(&pred, &target)?)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains `model` in place of a copy and returns the best validation checkpoint.
///
/// Without validation samples the last epoch is kept.
pub fn train(model: Refiner, train: &[TrainSample], val: &[TrainSample], schedule: &TrainSchedule) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(RefinerError::EmptyManifest("no training samples"));
    }
    let mut model = model;
    let initial_loss = mean_loss(&model, train)?;
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut best: Option<(f64, usize, Refiner)> = None;
    let batch = schedule.batch_size.max(1);
    for epoch in 0..schedule.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(polypaug_core::seed::derive(schedule.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let results: Vec<(f64, Grads)> = chunk
                .par_iter()
                .map(|&i| model.loss_and_grad(&train[i]).map(|(l, g)| (l.total, g)))
                .collect::<Result<_>>()?;
            let mut total = model.zero_grads();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(RefinerError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        detail: format!("sample loss {loss}"),
                    });
                }
                loss_sum += loss;
                for (t, gi) in total.iter_mut().zip(g) {
                    t.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            total.iter_mut().flatten().for_each(|v| *v *= scale);
            if let Some(bad) = total.iter().flatten().find(|v| !v.is_finite()) {
                return Err(RefinerError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("gradient entry {bad}"),
                });
            }
            adam.step(&mut model, &total, schedule);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_mdice = if val.is_empty() { f64::NAN } else { evaluate_mdice(&model, val)? };
        tracing::info!(epoch, train_loss, val_mdice, "refiner epoch");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_mdice,
        });
        let score = if val.is_empty() { epoch as f64 } else { val_mdice };
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        history,
        initial_loss,
    })
}
