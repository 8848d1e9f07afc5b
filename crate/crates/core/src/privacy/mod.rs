//! Privacy units and calibrated-noise primitives.
//!
//! Neighboring datasets differ by the addition or removal of one record
//! (unbounded DP); every sensitivity in this crate is stated under that
//! relation.

mod calibration;
mod conversion;
mod mechanisms;

pub use calibration::{
    analytic_gaussian_delta, analytic_gaussian_sigma, gaussian_sigma, laplace_scale,
    renyi_epsilon_for_counts, renyi_sigma_for_counts, GaussianCalibration, RenyiCalibration,
};
pub use conversion::{
    approx_dp_to_zcdp, gaussian_zcdp, pure_dp_to_zcdp, zcdp_to_approx_dp,
};
pub use mechanisms::{
    exponential_mechanism, exponential_probabilities, gaussian_mechanism, laplace_mechanism,
    sample_log_weights, ScoredCandidate,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, DpError, Result};

/// An (epsilon, delta) guarantee. Pure DP is `delta == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Budget", into = "Budget")]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid_param(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid_param(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }

    /// Equal split into `parts` sequentially composed pieces.
    pub fn split(&self, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(invalid_param("cannot split a budget into zero parts"));
        }
        Self::new(self.epsilon / parts as f64, self.delta / parts as f64)
    }

    pub fn as_budget(&self) -> Budget {
        Budget { epsilon: self.epsilon, delta: self.delta }
    }
}

impl TryFrom<Budget> for PrivacyParams {
    type Error = DpError;

    fn try_from(b: Budget) -> Result<Self> {
        PrivacyParams::new(b.epsilon, b.delta)
    }
}

impl From<PrivacyParams> for Budget {
    fn from(p: PrivacyParams) -> Self {
        p.as_budget()
    }
}

/// Non-negative (epsilon, delta) amount used for spent and remaining budget
/// arithmetic, where zero is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Budget {
    pub epsilon: f64,
    pub delta: f64,
}

/// Relative slack used when comparing accumulated floating-point budgets.
pub const BUDGET_RELATIVE_TOLERANCE: f64 = 1e-9;

impl Budget {
    pub const ZERO: Budget = Budget { epsilon: 0.0, delta: 0.0 };

    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self { epsilon, delta }
    }

    pub fn plus(&self, other: &Budget) -> Budget {
        Budget { epsilon: self.epsilon + other.epsilon, delta: self.delta + other.delta }
    }

    /// Coordinate-wise `self - other`, floored at zero.
    pub fn saturating_minus(&self, other: &Budget) -> Budget {
        Budget {
            epsilon: (self.epsilon - other.epsilon).max(0.0),
            delta: (self.delta - other.delta).max(0.0),
        }
    }

    pub fn max(&self, other: &Budget) -> Budget {
        Budget { epsilon: self.epsilon.max(other.epsilon), delta: self.delta.max(other.delta) }
    }

    /// True when both coordinates are within `total`, up to a relative
    /// tolerance that absorbs summation round-off (fifty charges of 0.1 fit
    /// in a total of 5).
    pub fn fits_within(&self, total: &Budget) -> bool {
        let fits = |spent: f64, cap: f64| spent <= cap + cap.abs() * BUDGET_RELATIVE_TOLERANCE;
        fits(self.epsilon, total.epsilon) && fits(self.delta, total.delta)
    }
}

/// A rho-zCDP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZcdpParams {
    rho: f64,
}

impl ZcdpParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(invalid_param(format!("rho must be positive and finite, got {rho}")));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Sequential composition of zCDP guarantees adds rho.
    pub fn compose(&self, other: &ZcdpParams) -> ZcdpParams {
        ZcdpParams { rho: self.rho + other.rho }
    }
}

/// l1 and l2 global sensitivity of a query under add/remove neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalSensitivity {
    pub l1: f64,
    pub l2: f64,
}

impl GlobalSensitivity {
    pub fn new(l1: f64, l2: f64) -> Result<Self> {
        if !(l1.is_finite() && l2.is_finite() && l1 >= 0.0 && l2 >= 0.0) {
            return Err(invalid_param(format!("sensitivities must be finite and non-negative, got l1={l1}, l2={l2}")));
        }
        if l2 > l1 * (1.0 + 1e-12) {
            return Err(invalid_param(format!("l2 sensitivity {l2} exceeds l1 sensitivity {l1}")));
        }
        Ok(Self { l1, l2 })
    }

    /// Sensitivity of a scalar query, where the l1 and l2 norms coincide.
    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(value, value)
    }
}
