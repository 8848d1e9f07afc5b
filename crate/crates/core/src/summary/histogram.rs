use serde::{Deserialize, Serialize};

use crate::accountant::ChargeRecord;
use crate::data::BoundedColumn;
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::{renyi_sigma_for_counts, PrivacyParams};
use crate::rng::RandomSource;
use crate::summary::{fresh_group, Release};

/// Strictly increasing bin edges; bin `i` is `[edges[i], edges[i+1])`, the
/// last bin also includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    edges: Vec<f64>,
}

impl HistogramSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(invalid_param("a histogram needs at least two edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid_param("histogram edges must be finite and strictly increasing"));
        }
        Ok(Self { edges })
    }

    pub fn uniform(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lower < upper) {
            return Err(invalid_param("uniform histogram needs bins > 0 and lower < upper"));
        }
        let width = (upper - lower) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lower + width * i as f64).collect();
        edges.push(upper);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let last = *self.edges.last().unwrap();
        if x < self.edges[0] || x > last {
            return None;
        }
        if x == last {
            return Some(self.n_bins() - 1);
        }
        // Number of edges <= x, minus one.
        Some(self.edges.partition_point(|e| *e <= x) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramMechanism {
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRelease {
    /// Noisy counts as drawn.
    pub raw: Vec<f64>,
    /// Post-processed copy with negative counts set to zero.
    pub counts: Vec<f64>,
    /// Laplace scale or Gaussian sigma of the per-bin noise.
    pub noise_scale: f64,
    /// Renyi order used by the Gaussian calibration.
    pub renyi_alpha: Option<f64>,
}

pub fn true_counts(column: &BoundedColumn, spec: &HistogramSpec) -> Vec<f64> {
    let mut counts = vec![0.0; spec.n_bins()];
    for &v in column.values() {
        if let Some(b) = spec.bin_of(v) {
            counts[b] += 1.0;
        }
    }
    counts
}

/// Clamps negative counts to zero. Idempotent.
pub fn postprocess_counts(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|c| c.max(0.0)).collect()
}

/// Noisy histogram of a bounded column. Each count has sensitivity 1.
/// Laplace noise uses the full epsilon per bin (bins are disjoint; the charge
/// is a parallel group). Gaussian noise is calibrated for `n_bins` composed
/// counts through Renyi DP and charged sequentially.
pub fn dp_histogram(
    column: &BoundedColumn,
    spec: &HistogramSpec,
    params: PrivacyParams,
    mechanism: HistogramMechanism,
    rng: &mut RandomSource,
) -> Result<Release<HistogramRelease>> {
    let edges = spec.edges();
    if edges[0] > column.lower() || *edges.last().unwrap() < column.upper() {
        return Err(DpError::InvalidInput(format!(
            "histogram edges [{}, {}] do not cover column bounds [{}, {}]",
            edges[0],
            edges.last().unwrap(),
            column.lower(),
            column.upper()
        )));
    }
    let counts = true_counts(column, spec);
    let (raw, noise_scale, renyi_alpha, charge) = match mechanism {
        HistogramMechanism::Laplace => {
            let b = params.epsilon().recip();
            let raw: Vec<f64> = counts.iter().map(|c| c + rng.laplace(b)).collect();
            (raw, b, None, ChargeRecord::parallel("histogram", params, fresh_group("histogram")))
        }
        HistogramMechanism::Gaussian => {
            let cal = renyi_sigma_for_counts(spec.n_bins(), params)?;
            let raw: Vec<f64> = counts.iter().map(|c| c + cal.sigma * rng.standard_normal()).collect();
            (raw, cal.sigma, Some(cal.alpha), ChargeRecord::sequential("histogram", params))
        }
    };
    Ok(Release {
        value: HistogramRelease { counts: postprocess_counts(&raw), raw, noise_scale, renyi_alpha },
        charge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativeError {
    /// max over prefixes of |sum noisy - sum true| / grand total.
    pub max_relative: f64,
    /// mean over prefixes of the same quantity.
    pub mean_relative: f64,
}

/// Errors of all cumulative sums, relative to the true grand total.
pub fn cumulative_error_metrics(true_counts: &[f64], noisy_counts: &[f64]) -> Result<CumulativeError> {
    if true_counts.len() != noisy_counts.len() || true_counts.is_empty() {
        return Err(DpError::InvalidInput("count vectors must be nonempty and of equal length".into()));
    }
    let total: f64 = true_counts.iter().sum();
    if total <= 0.0 {
        return Err(DpError::UndefinedMetric("true histogram total is zero".into()));
    }
    let (mut t, mut s, mut max, mut sum) = (0.0, 0.0, 0.0f64, 0.0);
    for (a, b) in true_counts.iter().zip(noisy_counts) {
        t += a;
        s += b;
        let e = (s - t).abs() / total;
        max = max.max(e);
        sum += e;
    }
    Ok(CumulativeError { max_relative: max, mean_relative: sum / true_counts.len() as f64 })
}
