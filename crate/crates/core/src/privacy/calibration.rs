use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{GlobalSensitivity, PrivacyParams};
use crate::error::{invalid_param, DpError, Result};

/// How the Gaussian mechanism's sigma is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianCalibration {
    /// sigma = l2 sqrt(2 ln(1.25/delta)) / epsilon, valid for epsilon <= 1.
    Classical,
    /// Smallest sigma satisfying the exact Gaussian privacy curve.
    Analytic,
}

/// Laplace scale b = l1 / epsilon.
pub fn laplace_scale(sens: GlobalSensitivity, epsilon: f64) -> Result<f64> {
    if !(sens.l1 > 0.0) {
        return Err(invalid_param(format!("l1 sensitivity must be positive, got {}", sens.l1)));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(sens.l1 / epsilon)
}

fn check_delta_open(delta: f64) -> Result<()> {
    if delta == 0.0 {
        return Err(DpError::Unsupported("the Gaussian mechanism cannot satisfy pure DP (delta = 0)".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid_param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Classical Gaussian-mechanism sigma. Only defined for epsilon <= 1.
pub fn gaussian_sigma(sens: GlobalSensitivity, params: PrivacyParams) -> Result<f64> {
    check_delta_open(params.delta())?;
    if sens.l2 <= 0.0 {
        return Err(invalid_param("l2 sensitivity must be positive"));
    }
    if params.epsilon() > 1.0 {
        return Err(DpError::Unsupported(format!(
            "classical Gaussian calibration requires epsilon <= 1 (got {}); use the analytic calibration",
            params.epsilon()
        )));
    }
    Ok(sens.l2 / params.epsilon() * (2.0 * (1.25 / params.delta()).ln()).sqrt())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact delta achieved by Gaussian noise `sigma` on a query with l2
/// sensitivity `l2` at privacy level `epsilon`:
/// Phi(l2/(2s) - eps s/l2) - e^eps Phi(-l2/(2s) - eps s/l2).
pub fn analytic_gaussian_delta(l2: f64, sigma: f64, epsilon: f64) -> f64 {
    let a = l2 / (2.0 * sigma);
    let b = epsilon * sigma / l2;
    let first = std_normal_cdf(a - b);
    let tail = std_normal_cdf(-a - b);
    let second = if tail > 0.0 { (epsilon + tail.ln()).exp() } else { 0.0 };
    (first - second).max(0.0)
}

/// Minimal sigma for which [`analytic_gaussian_delta`] is at most delta,
/// found by bisection to relative tolerance 1e-9.
pub fn analytic_gaussian_sigma(sens: GlobalSensitivity, params: PrivacyParams) -> Result<f64> {
    check_delta_open(params.delta())?;
    if sens.l2 <= 0.0 {
        return Err(invalid_param("l2 sensitivity must be positive"));
    }
    let (l2, eps, delta) = (sens.l2, params.epsilon(), params.delta());
    let ok = |s: f64| analytic_gaussian_delta(l2, s, eps) <= delta;

    let mut hi = l2 * (2.0 * (1.25 / delta).ln()).sqrt() / eps;
    let mut steps = 0;
    while !ok(hi) {
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(DpError::Calibration("could not bracket analytic Gaussian sigma from above".into()));
        }
    }
    let mut lo = hi / 2.0;
    steps = 0;
    while ok(lo) {
        lo /= 2.0;
        steps += 1;
        if steps > 2000 || lo == 0.0 {
            return Err(DpError::Calibration("could not bracket analytic Gaussian sigma from below".into()));
        }
    }
    for _ in 0..400 {
        if (hi - lo) <= 1e-9 * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(DpError::Calibration("analytic Gaussian bisection did not converge".into()))
}

/// Result of calibrating Gaussian noise for `m` unit-sensitivity counts
/// through Renyi DP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiCalibration {
    pub sigma: f64,
    /// Renyi order at which the conversion to (epsilon, delta) is tightest.
    pub alpha: f64,
    /// The epsilon actually certified at `alpha` (at most the requested one).
    pub epsilon: f64,
}

/// Golden-section minimization of a unimodal function on [lo, hi].
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Best (epsilon, alpha) certified for `m` Gaussian counts with noise
/// `sigma` at `delta`: min over alpha > 1 of m alpha/(2 sigma^2) + ln(1/delta)/(alpha-1).
pub fn renyi_epsilon_for_counts(m: usize, sigma: f64, delta: f64) -> (f64, f64) {
    let log_inv = (1.0 / delta).ln();
    let bound = |alpha: f64| m as f64 * alpha / (2.0 * sigma * sigma) + log_inv / (alpha - 1.0);
    // Search over t = ln(alpha - 1), where the bound is convex.
    let (t, eps) = golden_min(|t| bound(1.0 + t.exp()), -30.0, 30.0, 200);
    (eps, 1.0 + t.exp())
}

/// Smallest sigma such that `m` unit-sensitivity Gaussian counts compose to
/// (epsilon, delta)-DP through the Renyi bound, by bisection on sigma with a
/// one-dimensional minimization over the Renyi order inside.
pub fn renyi_sigma_for_counts(m: usize, params: PrivacyParams) -> Result<RenyiCalibration> {
    if m == 0 {
        return Err(invalid_param("number of counts must be at least 1"));
    }
    check_delta_open(params.delta())?;
    let (eps, delta) = (params.epsilon(), params.delta());
    let ok = |s: f64| renyi_epsilon_for_counts(m, s, delta).0 <= eps;

    let mut hi = ((m as f64) * (2.0 * (1.0 / delta).ln())).sqrt() / eps + 1.0;
    let mut steps = 0;
    while !ok(hi) {
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(DpError::Calibration("Renyi calibration infeasible for the requested budget".into()));
        }
    }
    let mut lo = hi / 2.0;
    steps = 0;
    while ok(lo) {
        lo /= 2.0;
        steps += 1;
        if steps > 2000 || lo == 0.0 {
            return Err(DpError::Calibration("Renyi calibration lower bracket failed".into()));
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (epsilon, alpha) = renyi_epsilon_for_counts(m, hi, delta);
    Ok(RenyiCalibration { sigma: hi, alpha, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> GlobalSensitivity {
        GlobalSensitivity::scalar(1.0).unwrap()
    }

    fn p(eps: f64, delta: f64) -> PrivacyParams {
        PrivacyParams::new(eps, delta).unwrap()
    }

    #[test]
    fn laplace_scale_examples() {
        assert_eq!(laplace_scale(unit(), 0.5).unwrap(), 2.0);
        assert_eq!(laplace_scale(GlobalSensitivity::scalar(0.001).unwrap(), 1.0).unwrap(), 0.001);
        assert_eq!(laplace_scale(GlobalSensitivity::scalar(15.0).unwrap(), 5.0).unwrap(), 3.0);
        assert!(laplace_scale(GlobalSensitivity::scalar(0.0).unwrap(), 1.0).is_err());
        assert!(laplace_scale(unit(), 0.0).is_err());
        assert!(laplace_scale(unit(), -1.0).is_err());
    }

    #[test]
    fn classical_sigma_examples() {
        // sqrt(2 ln(1.25e5)) evaluated independently with python/mpmath.
        let s = gaussian_sigma(unit(), p(1.0, 1e-5)).unwrap();
        assert_relative_eq!(s, 4.844_805_262_605_389, max_relative = 1e-12);
        let s2 = gaussian_sigma(GlobalSensitivity::scalar(2.0).unwrap(), p(1.0, 1e-5)).unwrap();
        assert_relative_eq!(s2, 2.0 * s, max_relative = 1e-15);
        let s_half = gaussian_sigma(unit(), p(0.5, 1e-5)).unwrap();
        assert_relative_eq!(s_half, 2.0 * s, max_relative = 1e-15);
    }

    #[test]
    fn classical_sigma_errors() {
        assert!(matches!(gaussian_sigma(unit(), p(1.0, 0.0)), Err(DpError::Unsupported(_))));
        assert!(matches!(gaussian_sigma(unit(), p(2.0, 1e-5)), Err(DpError::Unsupported(_))));
    }

    #[test]
    fn analytic_sigma_below_classical() {
        let a = analytic_gaussian_sigma(unit(), p(1.0, 1e-5)).unwrap();
        // Reference root of the privacy-curve equation from scipy brentq.
        assert_relative_eq!(a, 3.730_631_634_815_970_7, max_relative = 1e-7);
        assert!(a < 4.8448);
        let a5 = analytic_gaussian_sigma(unit(), p(5.0, 1e-5)).unwrap();
        assert_relative_eq!(a5, 0.891_868_264_951_456_1, max_relative = 1e-7);
        assert!(a > a5);
    }

    #[test]
    fn analytic_sigma_is_minimal() {
        let s = analytic_gaussian_sigma(unit(), p(1.0, 1e-5)).unwrap();
        assert!(analytic_gaussian_delta(1.0, s, 1.0) <= 1e-5);
        assert!(analytic_gaussian_delta(1.0, s * (1.0 - 1e-6), 1.0) > 1e-5);
    }

    #[test]
    fn analytic_monotone_in_eps_and_delta() {
        for &delta in &[1e-3, 1e-7, 1e-10] {
            let mut prev = f64::INFINITY;
            for i in 1..=40 {
                let s = analytic_gaussian_sigma(unit(), p(i as f64 * 0.5, delta)).unwrap();
                assert!(s < prev);
                prev = s;
            }
        }
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let s = analytic_gaussian_sigma(unit(), p(1.0, 10f64.powi(-k))).unwrap();
            assert!(s > prev || prev.is_infinite());
            prev = s;
        }
        for k in 1..12 {
            for i in 1..=10 {
                let pp = p(i as f64 * 0.1, 10f64.powi(-k));
                assert!(analytic_gaussian_sigma(unit(), pp).unwrap() <= gaussian_sigma(unit(), pp).unwrap());
            }
        }
    }

    /// Closed form of the inner minimization, used as an independent oracle.
    fn renyi_closed_form(m: usize, eps: f64, delta: f64) -> (f64, f64) {
        let l = (1.0 / delta).ln();
        let c = ((l + eps).sqrt() - l.sqrt()).powi(2);
        ((m as f64 / (2.0 * c)).sqrt(), 1.0 + (l / c).sqrt())
    }

    #[test]
    fn renyi_matches_closed_form() {
        for &(m, eps, delta) in &[(1, 1.0, 1e-5), (150, 5.0, 1e-7), (150, 1.0, 1e-7), (9, 0.5, 1e-3)] {
            let cal = renyi_sigma_for_counts(m, p(eps, delta)).unwrap();
            let (sigma, alpha) = renyi_closed_form(m, eps, delta);
            assert_relative_eq!(cal.sigma, sigma, max_relative = 1e-7);
            assert_relative_eq!(cal.alpha, alpha, max_relative = 1e-4);
        }
    }

    #[test]
    fn renyi_plug_back() {
        let cal = renyi_sigma_for_counts(150, p(5.0, 1e-7)).unwrap();
        let l = (1e7f64).ln();
        let bound = 150.0 * cal.alpha / (2.0 * cal.sigma * cal.sigma) + l / (cal.alpha - 1.0);
        assert!(bound <= 5.0 * (1.0 + 1e-9));
        assert!(bound >= 5.0 * (1.0 - 1e-6));
        assert_relative_eq!(cal.sigma, 14.913_265_306_475_012, max_relative = 1e-7);
    }

    #[test]
    fn renyi_monotone_in_m() {
        let mut prev = 0.0;
        for m in 1..200 {
            let s = renyi_sigma_for_counts(m, p(1.0, 1e-7)).unwrap().sigma;
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn renyi_single_count_relative_to_single_query() {
        // The Renyi route is never tighter than the exact analytic curve.
        for &eps in &[0.1, 0.5, 1.0, 5.0] {
            let r = renyi_sigma_for_counts(1, p(eps, 1e-5)).unwrap().sigma;
            assert!(r >= analytic_gaussian_sigma(unit(), p(eps, 1e-5)).unwrap());
        }
        // It beats the classical formula at small epsilon and stays within 2%
        // of it on the classical validity range.
        let r = renyi_sigma_for_counts(1, p(0.1, 1e-5)).unwrap().sigma;
        assert!(r < gaussian_sigma(unit(), p(0.1, 1e-5)).unwrap());
        for &eps in &[0.25, 0.5, 1.0] {
            let r = renyi_sigma_for_counts(1, p(eps, 1e-5)).unwrap().sigma;
            let c = gaussian_sigma(unit(), p(eps, 1e-5)).unwrap();
            assert!((r / c - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn renyi_errors() {
        assert!(renyi_sigma_for_counts(0, p(1.0, 1e-5)).is_err());
        assert!(renyi_sigma_for_counts(3, p(1.0, 0.0)).is_err());
    }
}
