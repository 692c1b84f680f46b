//! Gaussian-mechanism noising, update clipping and per-round privacy accounting.
//!
//! Per round, releasing a model with added `N(0, sigma_p^2 I)` noise whose
//! update sensitivity is bounded by `Δ` is charged `ε = Δ² / (2 σ_p²)`.
//! Rounds compose by plain summation of ε. That total is a bookkeeping
//! figure, not an advanced-composition bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QeflError, Result};
use crate::nn::ParamVector;
use crate::rng::fill_standard_normal;

pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub enabled: bool,
    pub sigma_p: f64,
    pub clip_norm: Option<f64>,
    /// The δ of (ε, δ), reported as configured.
    pub delta: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_p: 0.01,
            clip_norm: None,
            delta: DEFAULT_DELTA,
        }
    }
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(invalid(
                "noise_sigma",
                format!("{} is not a finite value >= 0", self.sigma_p),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(
                    "clip_norm",
                    format!("{c} is not a positive finite value"),
                ));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(
                "dp_delta",
                format!("{} is not in (0, 1)", self.delta),
            ));
        }
        Ok(())
    }

    /// Noise actually applied: zero when disabled.
    pub fn effective_sigma(&self) -> f64 {
        if self.enabled {
            self.sigma_p
        } else {
            0.0
        }
    }
}

/// `params + sigma_p * z`, `z` standard normal; one draw per coordinate always.
pub fn add_noise<R: Rng + ?Sized>(params: &ParamVector, sigma_p: f64, rng: &mut R) -> ParamVector {
    let mut noise = vec![0.0; params.len()];
    fill_standard_normal(rng, &mut noise);
    if sigma_p == 0.0 {
        return params.clone();
    }
    ParamVector::new(
        params
            .as_slice()
            .iter()
            .zip(&noise)
            .map(|(p, z)| p + sigma_p * z)
            .collect(),
    )
}

/// Shrink the update `selected - global` to L2 norm at most `clip_norm`,
/// keeping its direction.
pub fn clip_update(
    selected: &ParamVector,
    global: &ParamVector,
    clip_norm: f64,
) -> Result<ParamVector> {
    if clip_norm.is_nan() || clip_norm <= 0.0 {
        return Err(invalid("clip_norm", format!("{clip_norm} is not positive")));
    }
    if selected.len() != global.len() {
        return Err(QeflError::ShapeMismatch {
            context: "clipped update",
            expected: global.len(),
            actual: selected.len(),
        });
    }
    let norm = selected.distance(global);
    if norm <= clip_norm {
        return Ok(selected.clone());
    }
    let scale = clip_norm / norm;
    Ok(ParamVector::new(
        global
            .as_slice()
            .iter()
            .zip(selected.as_slice())
            .map(|(g, s)| g + (s - g) * scale)
            .collect(),
    ))
}

/// `Δ² / (2 σ_p²)`.
pub fn epsilon_for(sensitivity: f64, sigma_p: f64) -> Result<f64> {
    if sensitivity.is_nan() || sensitivity < 0.0 {
        return Err(invalid(
            "sensitivity",
            format!("{sensitivity} is not non-negative"),
        ));
    }
    if sigma_p == 0.0 {
        return Err(QeflError::UnboundedEpsilon);
    }
    if sigma_p.is_nan() || sigma_p < 0.0 {
        return Err(invalid(
            "noise_sigma",
            format!("{sigma_p} is not non-negative"),
        ));
    }
    Ok(sensitivity * sensitivity / (2.0 * sigma_p * sigma_p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivitySource {
    /// Δ is the clipping bound: a worst-case figure.
    ClipBound,
    /// Δ is the largest update norm seen this round: empirical, not a guarantee.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// 1-based; 0 before any round.
    pub round: usize,
    pub sensitivity: f64,
    pub source: SensitivitySource,
    /// `+inf` when the noise std is zero.
    pub epsilon_round: f64,
    pub rounds_composed: usize,
    pub epsilon_total: f64,
    pub delta: f64,
}

impl PrivacyReport {
    pub fn empty(delta: f64) -> Self {
        Self {
            round: 0,
            sensitivity: 0.0,
            source: SensitivitySource::Empirical,
            epsilon_round: 0.0,
            rounds_composed: 0,
            epsilon_total: 0.0,
            delta,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.epsilon_total.is_finite()
    }
}

/// Charge one round. Δ is the clip bound when clipping is on, otherwise the
/// observed maximum update norm. Fails with [`QeflError::UnboundedEpsilon`]
/// when `sigma_p` is zero.
pub fn account_round(
    prior: &PrivacyReport,
    observed_max_norm: f64,
    clip_norm: Option<f64>,
    sigma_p: f64,
) -> Result<PrivacyReport> {
    let (sensitivity, source) = match clip_norm {
        Some(c) => (c, SensitivitySource::ClipBound),
        None => (observed_max_norm, SensitivitySource::Empirical),
    };
    let epsilon_round = epsilon_for(sensitivity, sigma_p)?;
    Ok(PrivacyReport {
        round: prior.round + 1,
        sensitivity,
        source,
        epsilon_round,
        rounds_composed: prior.rounds_composed + 1,
        epsilon_total: prior.epsilon_total + epsilon_round,
        delta: prior.delta,
    })
}

/// As [`account_round`], but a zero noise std yields an unbounded (`+inf`)
/// report instead of an error.
pub fn account_round_lenient(
    prior: &PrivacyReport,
    observed_max_norm: f64,
    clip_norm: Option<f64>,
    sigma_p: f64,
) -> Result<PrivacyReport> {
    match account_round(prior, observed_max_norm, clip_norm, sigma_p) {
        Err(QeflError::UnboundedEpsilon) => Ok(PrivacyReport {
            round: prior.round + 1,
            sensitivity: clip_norm.unwrap_or(observed_max_norm),
            source: if clip_norm.is_some() {
                SensitivitySource::ClipBound
            } else {
                SensitivitySource::Empirical
            },
            epsilon_round: f64::INFINITY,
            rounds_composed: prior.rounds_composed + 1,
            epsilon_total: f64::INFINITY,
            delta: prior.delta,
        }),
        other => other,
    }
}
