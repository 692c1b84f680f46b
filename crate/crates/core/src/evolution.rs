//! Gaussian mutation and best-of-K selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, QeflError, Result};
use crate::nn::{local_loss, ParamVector, QennArchitecture};
use crate::rng::fill_standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Standard deviation of the perturbation.
    pub sigma: f64,
    /// Variants spawned per client and round.
    pub k: usize,
}

impl MutationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(
                "mutation_sigma",
                format!("{} is not a finite value >= 0", self.sigma),
            ));
        }
        if self.k == 0 {
            return Err(invalid("variants", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    /// 1-based.
    pub variant_index: usize,
    pub params: ParamVector,
    pub loss: f64,
}

/// `params + sigma * z` with `z` standard normal. One normal is drawn per
/// coordinate whatever `sigma` is, so stream consumption does not depend on it.
pub fn mutate<R: Rng + ?Sized>(params: &ParamVector, sigma: f64, rng: &mut R) -> ParamVector {
    let mut noise = vec![0.0; params.len()];
    fill_standard_normal(rng, &mut noise);
    if sigma == 0.0 {
        return params.clone();
    }
    ParamVector::new(
        params
            .as_slice()
            .iter()
            .zip(&noise)
            .map(|(p, z)| p + sigma * z)
            .collect(),
    )
}

/// Lowest loss wins; equal losses go to the lowest variant index.
pub fn select_best(outcomes: Vec<VariantOutcome>) -> Result<VariantOutcome> {
    outcomes
        .into_iter()
        .reduce(|best, o| {
            let better =
                o.loss < best.loss || (o.loss == best.loss && o.variant_index < best.variant_index);
            if better {
                o
            } else {
                best
            }
        })
        .ok_or(QeflError::NoVariants)
}

/// For each trial draw `k_max` mutations; entry `k - 1` of the result is the
/// fraction of trials whose best of the first `k` mutations has strictly lower
/// loss than `params`. Sharing the draws makes the curve non-decreasing in `k`.
pub fn improvement_frequencies<R: Rng + ?Sized>(
    arch: &QennArchitecture,
    params: &ParamVector,
    data: &Dataset,
    sigma: f64,
    k_max: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    MutationConfig { sigma, k: k_max }.validate()?;
    let base = local_loss(arch, params, data)?;
    let mut hits = vec![0usize; k_max];
    for _ in 0..trials {
        let mut best = f64::INFINITY;
        for slot in hits.iter_mut() {
            let loss = local_loss(arch, &mutate(params, sigma, rng), data)?;
            best = best.min(loss);
            if best < base {
                *slot += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / trials as f64).collect())
}

/// Fraction of trials in which at least one of `k` fresh mutations (no
/// fine-tuning) has strictly lower local loss than `params`.
pub fn estimate_improvement_probability<R: Rng + ?Sized>(
    arch: &QennArchitecture,
    params: &ParamVector,
    data: &Dataset,
    sigma: f64,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    improvement_frequencies(arch, params, data, sigma, k, trials, rng).map(|f| f[k - 1])
}
