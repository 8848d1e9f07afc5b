//! Differentially private summary statistics over bounded columns.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::accountant::ChargeRecord;

pub mod histogram;
pub mod mean;
pub mod quantile;

pub use histogram::{
    cumulative_error_metrics, dp_histogram, postprocess_counts, true_counts, CumulativeError, HistogramMechanism,
    HistogramRelease, HistogramSpec,
};
pub use mean::{
    confidential_mean_ci, dp_mean_bhm, dp_mean_noisymad, dp_mean_noisyvar, MadStatistic, MeanCi, MeanMethod,
    NoisyMeanConfig,
};
pub(crate) use quantile::order_rank;
pub use quantile::{
    dp_quantile_exp, dp_quantile_smooth, dp_quantiles, per_quantile_epsilon, smooth_sensitivity, QuantileMode,
};

/// A released value together with the single charge it costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Release<T> {
    pub value: T,
    pub charge: ChargeRecord,
}

static GROUP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Process-unique parallel-composition group name.
pub(crate) fn fresh_group(prefix: &str) -> String {
    format!("{prefix}-{}", GROUP_COUNTER.fetch_add(1, Ordering::Relaxed))
}

pub(crate) fn check_confidence(confidence: f64) -> crate::error::Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(crate::error::invalid_param(format!("confidence must lie in (0, 1), got {confidence}")))
    }
}
