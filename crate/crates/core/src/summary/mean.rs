use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::accountant::ChargeRecord;
use crate::data::BoundedColumn;
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::{approx_dp_to_zcdp, PrivacyParams};
use crate::rng::RandomSource;
use crate::summary::{check_confidence, Release};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MeanMethod {
    NoisyVar,
    NoisyMad,
    Bhm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub point: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub confidence: f64,
    pub method: MeanMethod,
}

/// Dispersion statistic released by NOISYMAD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MadStatistic {
    /// Mean absolute deviation about the released noisy mean. Sensitivity
    /// (U-L)/n; multiplied by sqrt(pi/2) to estimate a normal sd.
    MeanAbsolute,
    /// Median absolute deviation about the released noisy mean. Sensitivity
    /// U-L; multiplied by 1.4826.
    MedianAbsolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyMeanConfig {
    /// Share of epsilon spent on the mean; the rest goes to the dispersion.
    pub mean_share: f64,
    /// Variance floor as a multiple of (U-L)^2.
    pub variance_floor: f64,
    /// Monte-Carlo draws for the interval.
    pub mc_draws: usize,
    pub mad: MadStatistic,
}

impl Default for NoisyMeanConfig {
    fn default() -> Self {
        Self { mean_share: 0.5, variance_floor: 1e-12, mc_draws: 10_000, mad: MadStatistic::MeanAbsolute }
    }
}

impl NoisyMeanConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mean_share > 0.0 && self.mean_share < 1.0) {
            return Err(invalid_param("mean_share must lie in (0, 1)"));
        }
        if self.mc_draws < 100 {
            return Err(invalid_param("at least 100 Monte-Carlo draws are required"));
        }
        Ok(())
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn z_value(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

/// Classical normal interval for the clamped sample mean (no privacy).
pub fn confidential_mean_ci(column: &BoundedColumn, confidence: f64) -> Result<(f64, f64)> {
    check_confidence(confidence)?;
    if column.len() < 2 {
        return Err(DpError::InsufficientData("need at least two records".into()));
    }
    let half = z_value(confidence) * (sample_variance(column.values()) / column.len() as f64).sqrt();
    Ok((column.mean() - half, column.mean() + half))
}

/// Interval for mu around a noisy mean whose error is N(0, sd^2/n) plus
/// Laplace(b), from empirical quantiles of simulated errors.
fn monte_carlo_interval(
    point: f64,
    sd: f64,
    n: f64,
    b: f64,
    confidence: f64,
    draws: usize,
    rng: &mut RandomSource,
) -> (f64, f64) {
    let se = sd / n.sqrt();
    let mut errs: Vec<f64> = (0..draws).map(|_| se * rng.standard_normal() + rng.laplace(b)).collect();
    errs.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let idx = ((p * draws as f64).ceil() as usize).clamp(1, draws) - 1;
        errs[idx]
    };
    let alpha = 1.0 - confidence;
    let (lo, hi) = (q(alpha / 2.0), q(1.0 - alpha / 2.0));
    (point - hi, point - lo)
}

fn noisy_mean_common(
    column: &BoundedColumn,
    epsilon: f64,
    confidence: f64,
    config: &NoisyMeanConfig,
) -> Result<(f64, f64, f64)> {
    check_confidence(confidence)?;
    config.validate()?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    if column.len() < 2 {
        return Err(DpError::InsufficientData("need at least two records".into()));
    }
    let eps1 = epsilon * config.mean_share;
    let eps2 = epsilon - eps1;
    let b_mean = column.width() / (column.len() as f64 * eps1);
    Ok((eps2, b_mean, column.len() as f64))
}

/// NOISYVAR: Laplace-noised mean and sample variance, interval by Monte Carlo.
pub fn dp_mean_noisyvar(
    column: &BoundedColumn,
    epsilon: f64,
    confidence: f64,
    config: &NoisyMeanConfig,
    rng: &mut RandomSource,
) -> Result<Release<MeanCi>> {
    let (eps2, b_mean, n) = noisy_mean_common(column, epsilon, confidence, config)?;
    let w = column.width();
    let point = column.mean() + rng.laplace(b_mean);
    let var = (sample_variance(column.values()) + rng.laplace(w * w / (n * eps2))).max(config.variance_floor * w * w);
    let (ci_lower, ci_upper) =
        monte_carlo_interval(point, var.sqrt(), n, b_mean, confidence, config.mc_draws, rng);
    Ok(Release {
        value: MeanCi { point, ci_lower, ci_upper, confidence, method: MeanMethod::NoisyVar },
        charge: ChargeRecord::sequential("mean_noisyvar", PrivacyParams::pure(epsilon)?),
    })
}

/// NOISYMAD: Laplace-noised mean and a noisy absolute-deviation scale.
pub fn dp_mean_noisymad(
    column: &BoundedColumn,
    epsilon: f64,
    confidence: f64,
    config: &NoisyMeanConfig,
    rng: &mut RandomSource,
) -> Result<Release<MeanCi>> {
    let (eps2, b_mean, n) = noisy_mean_common(column, epsilon, confidence, config)?;
    let w = column.width();
    let point = column.mean() + rng.laplace(b_mean);
    let center = point.clamp(column.lower(), column.upper());
    let mut dev: Vec<f64> = column.values().iter().map(|x| (x - center).abs()).collect();
    let (stat, sens, factor) = match config.mad {
        MadStatistic::MeanAbsolute => {
            (dev.iter().sum::<f64>() / n, w / n, (std::f64::consts::PI / 2.0).sqrt())
        }
        MadStatistic::MedianAbsolute => {
            dev.sort_by(f64::total_cmp);
            let mid = dev.len() / 2;
            let med = if dev.len() % 2 == 0 { 0.5 * (dev[mid - 1] + dev[mid]) } else { dev[mid] };
            (med, w, 1.4826)
        }
    };
    let floor = (config.variance_floor * w * w).sqrt();
    let sd = (factor * (stat + rng.laplace(sens / eps2))).max(floor);
    let (ci_lower, ci_upper) = monte_carlo_interval(point, sd, n, b_mean, confidence, config.mc_draws, rng);
    Ok(Release {
        value: MeanCi { point, ci_lower, ci_upper, confidence, method: MeanMethod::NoisyMad },
        charge: ChargeRecord::sequential("mean_noisymad", PrivacyParams::pure(epsilon)?),
    })
}

/// BHM mean: `k` Gaussian replicate means, each calibrated through zCDP to
/// (epsilon/k, delta/k). Point is the replicate average; interval is a normal
/// approximation with the replicate sd divided by sqrt(k). With k = 1 the
/// calibrated noise sd stands in for the replicate sd.
pub fn dp_mean_bhm(
    column: &BoundedColumn,
    params: PrivacyParams,
    k: usize,
    confidence: f64,
    rng: &mut RandomSource,
) -> Result<Release<MeanCi>> {
    check_confidence(confidence)?;
    if k == 0 {
        return Err(invalid_param("BHM needs at least one replicate"));
    }
    if params.delta() <= 0.0 {
        return Err(DpError::Unsupported("BHM Gaussian replicates need delta > 0".into()));
    }
    if column.is_empty() {
        return Err(DpError::InsufficientData("mean of an empty column".into()));
    }
    let rho = approx_dp_to_zcdp(params.split(k)?)?.rho();
    let sensitivity = column.width() / column.len() as f64;
    let sigma = sensitivity / (2.0 * rho).sqrt();
    let mean = column.mean();
    let reps: Vec<f64> = (0..k).map(|_| mean + sigma * rng.standard_normal()).collect();
    let point = reps.iter().sum::<f64>() / k as f64;
    let sd = if k >= 2 { sample_variance(&reps).sqrt() } else { sigma };
    let half = z_value(confidence) * sd / (k as f64).sqrt();
    Ok(Release {
        value: MeanCi { point, ci_lower: point - half, ci_upper: point + half, confidence, method: MeanMethod::Bhm },
        charge: ChargeRecord::sequential("mean_bhm", params),
    })
}
