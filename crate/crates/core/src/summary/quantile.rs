use serde::{Deserialize, Serialize};

use crate::accountant::ChargeRecord;
use crate::data::BoundedColumn;
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::{approx_dp_to_zcdp, sample_log_weights, PrivacyParams};
use crate::rng::RandomSource;
use crate::summary::Release;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMode {
    /// Each of m quantiles gets epsilon/m.
    PureSplit,
    /// Each quantile is epsilon0-DP, hence epsilon0^2/8-zCDP; m of them
    /// compose to a rho that must convert back into the request.
    ZcdpCompose,
}

fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(invalid_param(format!("quantile probability must lie in (0, 1), got {q}")))
    }
}

fn sorted_values(column: &BoundedColumn) -> Vec<f64> {
    let mut xs = column.values().to_vec();
    xs.sort_by(f64::total_cmp);
    xs
}

/// Exponential-mechanism quantile. The candidate range [lower, upper] is cut
/// at the sorted data points; interval `i` (between the i-th and (i+1)-th
/// endpoint) has utility -|i - q n| and log mass ln(length) + eps u / 2.
/// `epsilon = 0` gives the uniform distribution on [lower, upper].
pub fn dp_quantile_exp(column: &BoundedColumn, q: f64, epsilon: f64, rng: &mut RandomSource) -> Result<f64> {
    check_probability(q)?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(invalid_param(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if column.is_empty() {
        return Err(DpError::InsufficientData("quantile of an empty column".into()));
    }
    let xs = sorted_values(column);
    exp_quantile_sorted(&xs, column.lower(), column.upper(), q, epsilon, rng)
}

fn exp_quantile_sorted(xs: &[f64], lower: f64, upper: f64, q: f64, epsilon: f64, rng: &mut RandomSource) -> Result<f64> {
    let n = xs.len();
    let target = q * n as f64;
    let mut intervals = Vec::with_capacity(n + 1);
    let mut log_w = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let lo = if i == 0 { lower } else { xs[i - 1] };
        let hi = if i == n { upper } else { xs[i] };
        let len = hi - lo;
        if len <= 0.0 {
            continue;
        }
        let utility = -(i as f64 - target).abs();
        intervals.push((lo, hi));
        log_w.push(len.ln() + epsilon * utility / 2.0);
    }
    let (lo, hi) = intervals[sample_log_weights(&log_w, rng)?];
    Ok((lo + (hi - lo) * rng.unit()).clamp(lower, upper))
}

/// Per-quantile epsilon used when `m` quantiles share `params`.
pub fn per_quantile_epsilon(m: usize, params: PrivacyParams, mode: QuantileMode) -> Result<f64> {
    if m == 0 {
        return Err(invalid_param("at least one quantile is required"));
    }
    if m == 1 {
        return Ok(params.epsilon());
    }
    match mode {
        QuantileMode::PureSplit => Ok(params.epsilon() / m as f64),
        QuantileMode::ZcdpCompose => {
            let rho = approx_dp_to_zcdp(params)?.rho();
            Ok((8.0 * rho / m as f64).sqrt())
        }
    }
}

/// Several exponential-mechanism quantiles; outputs sorted nondecreasing.
pub fn dp_quantiles(
    column: &BoundedColumn,
    probabilities: &[f64],
    mode: QuantileMode,
    params: PrivacyParams,
    rng: &mut RandomSource,
) -> Result<Release<Vec<f64>>> {
    if probabilities.is_empty() {
        return Err(invalid_param("at least one quantile is required"));
    }
    for q in probabilities {
        check_probability(*q)?;
    }
    if probabilities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_param("quantile probabilities must be sorted ascending and distinct"));
    }
    if column.is_empty() {
        return Err(DpError::InsufficientData("quantile of an empty column".into()));
    }
    let eps0 = per_quantile_epsilon(probabilities.len(), params, mode)?;
    let xs = sorted_values(column);
    let mut out = probabilities
        .iter()
        .map(|q| exp_quantile_sorted(&xs, column.lower(), column.upper(), *q, eps0, rng))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(f64::total_cmp);
    Ok(Release { value: out, charge: ChargeRecord::sequential("quantiles", params) })
}

/// 1-based rank of the q-th order statistic among n values.
pub(crate) fn order_rank(q: f64, n: usize) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n)
}

/// Beta-smooth sensitivity of the `rank`-th (1-based) order statistic of
/// sorted `xs` under substitution of records, with values padded by `lower`
/// below index 1 and `upper` above index n:
/// max over k of e^(-k beta) max_{0<=t<=k+1} (x[rank+t] - x[rank+t-k-1]).
pub fn smooth_sensitivity(xs: &[f64], lower: f64, upper: f64, rank: usize, beta: f64) -> f64 {
    let n = xs.len() as i64;
    let x = |i: i64| -> f64 {
        if i < 1 {
            lower
        } else if i > n {
            upper
        } else {
            xs[(i - 1) as usize]
        }
    };
    let m = rank as i64;
    let width = upper - lower;
    let mut best = 0.0f64;
    for k in 0..=(n + 1) {
        let decay = (-(k as f64) * beta).exp();
        if decay * width <= best {
            break;
        }
        let mut a = 0.0f64;
        for t in 0..=(k + 1) {
            a = a.max(x(m + t) - x(m + t - k - 1));
        }
        best = best.max(decay * a);
    }
    best
}

/// Order statistic plus Laplace noise of scale 2 S* / epsilon, where S* is
/// the smooth sensitivity at beta = epsilon / (2 ln(1/delta)).
pub fn dp_quantile_smooth(
    column: &BoundedColumn,
    q: f64,
    params: PrivacyParams,
    rng: &mut RandomSource,
) -> Result<Release<f64>> {
    check_probability(q)?;
    if params.delta() <= 0.0 {
        return Err(DpError::Unsupported("smooth-sensitivity quantiles need delta > 0".into()));
    }
    if column.is_empty() {
        return Err(DpError::InsufficientData("quantile of an empty column".into()));
    }
    let xs = sorted_values(column);
    let eps = params.epsilon();
    let beta = eps / (2.0 * (1.0 / params.delta()).ln());
    let rank = order_rank(q, xs.len());
    let s = smooth_sensitivity(&xs, column.lower(), column.upper(), rank, beta);
    let noisy = xs[rank - 1] + rng.laplace(2.0 * s / eps);
    Ok(Release {
        value: noisy.clamp(column.lower(), column.upper()),
        charge: ChargeRecord::sequential("quantile_smooth", params),
    })
}
