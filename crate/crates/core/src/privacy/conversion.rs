use super::{GlobalSensitivity, PrivacyParams, ZcdpParams};
use crate::error::{invalid_param, Result};

/// rho-zCDP implies (rho + 2 sqrt(rho ln(1/delta)), delta)-DP.
pub fn zcdp_to_approx_dp(z: ZcdpParams, delta: f64) -> Result<PrivacyParams> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid_param(format!("delta must lie in (0, 1), got {delta}")));
    }
    let rho = z.rho();
    PrivacyParams::new(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt(), delta)
}

/// epsilon-DP implies (epsilon^2 / 2)-zCDP.
pub fn pure_dp_to_zcdp(epsilon: f64) -> Result<ZcdpParams> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    ZcdpParams::new(epsilon * epsilon / 2.0)
}

/// The Gaussian mechanism with noise `sigma` is (l2^2 / (2 sigma^2))-zCDP.
pub fn gaussian_zcdp(sens: GlobalSensitivity, sigma: f64) -> Result<ZcdpParams> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid_param(format!("sigma must be positive, got {sigma}")));
    }
    if sens.l2 <= 0.0 {
        return Err(invalid_param("l2 sensitivity must be positive"));
    }
    ZcdpParams::new(sens.l2 * sens.l2 / (2.0 * sigma * sigma))
}

/// Largest rho whose [`zcdp_to_approx_dp`] conversion at `params.delta()`
/// does not exceed `params.epsilon()`: rho = (sqrt(L + eps) - sqrt(L))^2 with
/// L = ln(1/delta).
pub fn approx_dp_to_zcdp(params: PrivacyParams) -> Result<ZcdpParams> {
    let delta = params.delta();
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid_param(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv = (1.0 / delta).ln();
    let root = (log_inv + params.epsilon()).sqrt() - log_inv.sqrt();
    ZcdpParams::new(root * root)
}
