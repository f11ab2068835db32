//! Central finite-difference checks of [`grad`](super::loss::grad).

use rand::seq::index::sample;
use rand::Rng;

use super::loss::{grad, hard_predictions, loss, predict_tables, Variant};
use super::params::ModelParams;
use super::TokenFeatures;
use crate::error::Result;
use crate::pgm::Assignment;
use crate::reasoner::Example;

/// Floor on the denominator of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Perturbations that flipped a hard prediction, where the loss is not
    /// differentiable.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn predictions(params: &ModelParams, feats: &TokenFeatures) -> Assignment {
    hard_predictions(&predict_tables(params, feats).1)
}

/// Sets every parameter to a fresh draw from U(-scale, scale) so no head is
/// trivially zero.
pub fn randomize<R: Rng + ?Sized>(params: &mut ModelParams, scale: f64, rng: &mut R) {
    for s in params.slices_mut() {
        for x in s.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

/// Compares analytic and central-difference gradients on `count` random
/// parameters, drawn only from rows the example can touch.
pub fn check_example<R: Rng + ?Sized>(
    params: &ModelParams,
    example: &Example,
    variant: Variant,
    count: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheck> {
    let (_, analytic) = grad(params, example, variant)?;
    let flat = analytic.to_flat(params);
    let feats = TokenFeatures::new(params.config().hash_dim, &example.theory, &example.query)?;
    let base = predictions(params, &feats);

    let e = params.config().embed_dim;
    let mut pool: Vec<usize> = analytic
        .embedding
        .keys()
        .flat_map(|&row| row * e..(row + 1) * e)
        .collect();
    pool.extend(params.encoder.embedding.len()..params.len());

    let mut out = GradCheck::default();
    let mut work = params.clone();
    for k in sample(rng, pool.len(), count.min(pool.len())) {
        let idx = pool[k];
        let orig = params.get(idx);
        work.set(idx, orig + step);
        let (plus, p_plus) = (loss(&work, example, variant)?, predictions(&work, &feats));
        work.set(idx, orig - step);
        let (minus, p_minus) = (loss(&work, example, variant)?, predictions(&work, &feats));
        work.set(idx, orig);
        if p_plus != base || p_minus != base {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        out.max_rel_error = out.max_rel_error.max(relative_error(flat[idx], numeric));
        out.checked += 1;
    }
    Ok(out)
}
