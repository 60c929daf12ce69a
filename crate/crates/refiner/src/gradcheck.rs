//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{grad_flat, Refiner, TrainSample};

/// Denominator floor of the relative error, so parameters with vanishing
/// gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic and central-difference gradients on `n_params` randomly chosen
/// parameters for one sample.
pub fn check_sample(model: &Refiner, sample_in: &TrainSample, n_params: usize, step: f64, seed: u64) -> Result<Vec<GradCheck>> {
    let (_, grads) = model.loss_and_grad(sample_in)?;
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = m.parameter_count();
    let mut picks = sample(&mut rng, total, n_params.min(total)).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|index| {
            let orig = m.get_flat(index);
            m.set_flat(index, orig + step);
            let plus = m.loss(sample_in)?.total;
            m.set_flat(index, orig - step);
            let minus = m.loss(sample_in)?.total;
            m.set_flat(index, orig);
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grad_flat(&grads, index);
            Ok(GradCheck {
                index,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            })
        })
        .collect()
}
