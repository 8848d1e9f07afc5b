use serde::{Deserialize, Serialize};

use super::calibration::{analytic_gaussian_sigma, gaussian_sigma, laplace_scale, GaussianCalibration};
use super::{GlobalSensitivity, PrivacyParams};
use crate::error::{invalid_param, DpError, Result};
use crate::rng::RandomSource;

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(DpError::InvalidInput(format!("non-finite query value {v}")));
    }
    Ok(())
}

/// Adds i.i.d. Laplace(0, l1/epsilon) noise to every coordinate.
pub fn laplace_mechanism(
    values: &[f64],
    sens: GlobalSensitivity,
    epsilon: f64,
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    check_finite(values)?;
    let b = laplace_scale(sens, epsilon)?;
    Ok(values.iter().map(|v| v + rng.laplace(b)).collect())
}

/// Adds i.i.d. N(0, sigma^2) noise, sigma from the selected calibration.
pub fn gaussian_mechanism(
    values: &[f64],
    sens: GlobalSensitivity,
    params: PrivacyParams,
    rng: &mut RandomSource,
    calibration: GaussianCalibration,
) -> Result<Vec<f64>> {
    check_finite(values)?;
    let sigma = match calibration {
        GaussianCalibration::Classical => gaussian_sigma(sens, params)?,
        GaussianCalibration::Analytic => analytic_gaussian_sigma(sens, params)?,
    };
    Ok(values.iter().map(|v| v + sigma * rng.standard_normal()).collect())
}

/// A candidate output with its utility score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<T> {
    pub value: T,
    pub utility: f64,
}

/// Selection probabilities of the exponential mechanism, proportional to
/// exp(epsilon u / (2 u_sens)), stabilized by subtracting the max utility.
pub fn exponential_probabilities(utilities: &[f64], u_sens: f64, epsilon: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(DpError::InvalidInput("exponential mechanism needs at least one candidate".into()));
    }
    if !(u_sens.is_finite() && u_sens > 0.0) {
        return Err(invalid_param(format!("utility sensitivity must be positive, got {u_sens}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(DpError::InvalidInput("utilities must be finite".into()));
    }
    let top = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = utilities
        .iter()
        .map(|u| (epsilon * (u - top) / (2.0 * u_sens)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Samples an index with probability proportional to exp(log_weights[i]).
/// Entries equal to -inf carry no mass. CDF inversion; ties go to the lower
/// index.
pub fn sample_log_weights(log_weights: &[f64], rng: &mut RandomSource) -> Result<usize> {
    let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(DpError::InvalidInput("no candidate has positive mass".into()));
    }
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = rng.unit() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if acc > target {
            return Ok(i);
        }
    }
    // Round-off left the target at the very top of the CDF.
    Ok(last_positive)
}

/// Exponential mechanism over a finite candidate set.
pub fn exponential_mechanism<T: Clone>(
    candidates: &[ScoredCandidate<T>],
    u_sens: f64,
    epsilon: f64,
    rng: &mut RandomSource,
) -> Result<ScoredCandidate<T>> {
    let utilities: Vec<f64> = candidates.iter().map(|c| c.utility).collect();
    let probs = exponential_probabilities(&utilities, u_sens, epsilon)?;
    let log_w: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let idx = sample_log_weights(&log_w, rng)?;
    Ok(candidates[idx].clone())
}
