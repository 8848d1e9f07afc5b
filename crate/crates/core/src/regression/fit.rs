use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::perturb::{add_noise, empirical_quantile, perturb_s, regularize};
use super::plan::sensitivity_plan;
use super::{
    compute_s, rescale_design, DesignColumn, DesignSpec, Interval, NoiseLaw, NoisySufficientStatistic,
    RegressionEstimate, RegressionMechanism, RegularizeOptions, ScaleMap,
};
use crate::accountant::ChargeRecord;
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::{approx_dp_to_zcdp, PrivacyParams};
use crate::rng::RandomSource;
use crate::summary::{check_confidence, Release};

const SIGMA2_FLOOR: f64 = 1e-12;

/// Covariance used for the simulated X^T u term of the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapCalibration {
    /// N(0, n_hat sigma2 X^T X), transcribed from the published algorithm.
    AsWritten,
    /// N(0, sigma2 X^T X), the classical covariance of X^T u.
    Classical,
}

/// Plug-in least-squares fit from a (noisy) sufficient statistic.
#[derive(Debug, Clone)]
pub struct UnitFit {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub n_hat: f64,
    pub xtx: DMatrix<f64>,
    /// sigma2 (X^T X)^-1.
    pub covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn z_value(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

/// beta = (X^T X)^-1 X^T Y and sigma2 = (Y^T Y - (X^T Y)^T beta) / (n_hat - p - 1)
/// from the partitioned matrix. `n_hat` defaults to entry (0, 0), which is the
/// (noisy) sample size when the first column is the intercept.
pub fn fit_plugin(matrix: &DMatrix<f64>, n_hat: Option<f64>) -> Result<UnitFit> {
    let d = matrix.nrows();
    if d < 2 || matrix.ncols() != d {
        return Err(DpError::InvalidInput("sufficient statistic must be square with at least two columns".into()));
    }
    let p = d - 1;
    let n_hat = n_hat.unwrap_or(matrix[(0, 0)]);
    if !(n_hat > (p + 1) as f64) {
        return Err(DpError::DegenerateFit(format!("n_hat = {n_hat} is not above p + 1 = {}", p + 1)));
    }
    let xtx = matrix.view((0, 0), (p, p)).into_owned();
    let xty = matrix.view((0, p), (p, 1)).column(0).into_owned();
    let yty = matrix[(p, p)];
    let chol = Cholesky::new(xtx.clone())
        .ok_or_else(|| DpError::DegenerateFit("X^T X is not positive definite; regularize first".into()))?;
    let beta = chol.solve(&xty);
    let sigma2 = ((yty - xty.dot(&beta)) / (n_hat - p as f64 - 1.0)).max(SIGMA2_FLOOR);
    let covariance = chol.inverse() * sigma2;
    Ok(UnitFit { beta, sigma2, n_hat, xtx, covariance, chol })
}

fn normal_intervals(beta: &DVector<f64>, cov: &DMatrix<f64>, confidence: f64) -> Vec<Interval> {
    let z = z_value(confidence);
    beta.iter()
        .enumerate()
        .map(|(j, b)| {
            let half = z * cov[(j, j)].max(0.0).sqrt();
            Interval::new(b - half, b + half)
        })
        .collect()
}

fn quantile_intervals(draws: &[DVector<f64>], confidence: f64) -> Vec<Interval> {
    let p = draws[0].len();
    let alpha = 1.0 - confidence;
    (0..p)
        .map(|j| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let lo = empirical_quantile(&mut col, alpha / 2.0);
            let hi = empirical_quantile(&mut col, 1.0 - alpha / 2.0);
            Interval::new(lo, hi)
        })
        .collect()
}

/// Bootstrap replicates of the published DP bootstrap: for each b, draw
/// h ~ P_H and X^T u, then
/// beta_b = A^-1 (A - h[xx]) beta + A^-1 (X^T u + h[xy]), A = X^T X.
/// Replicate b uses the stream `rng.derive(b)`, so the result does not
/// depend on thread scheduling.
pub fn bootstrap_draws(
    fit: &UnitFit,
    law: &NoiseLaw,
    replicates: usize,
    calibration: BootstrapCalibration,
    rng: &RandomSource,
) -> Result<Vec<DVector<f64>>> {
    if replicates < 100 {
        return Err(invalid_param("the bootstrap needs at least 100 replicates"));
    }
    let p = fit.beta.len();
    if law.dim() != p + 1 {
        return Err(DpError::InvalidInput("noise law dimension does not match the fit".into()));
    }
    let factor = match calibration {
        BootstrapCalibration::AsWritten => fit.n_hat * fit.sigma2,
        BootstrapCalibration::Classical => fit.sigma2,
    };
    let l = fit.chol.l();
    let draws = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.derive(b);
            let h = law.sample(&mut r);
            let z = DVector::from_fn(p, |_, _| r.standard_normal());
            let xtu = &l * z * factor.sqrt();
            let h_xx = h.view((0, 0), (p, p));
            let h_xy = h.view((0, p), (p, 1)).column(0).into_owned();
            let rhs = xtu + h_xy - h_xx * &fit.beta;
            &fit.beta + fit.chol.solve(&rhs)
        })
        .collect();
    Ok(draws)
}

/// Ordinary least squares on the original scale through a QR
/// factorization of X. The residual variance uses the same n - p - 1
/// divisor as the plug-in fit so the two are directly comparable.
pub fn confidential_ols(spec: &DesignSpec, confidence: f64) -> Result<RegressionEstimate> {
    check_confidence(confidence)?;
    let layout = spec.layout();
    let p = layout.len() - 1;
    let n = spec.n_rows();
    if n <= p + 1 {
        return Err(DpError::InsufficientData(format!("{n} rows for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |r, j| match layout[j] {
        DesignColumn::Intercept => 1.0,
        DesignColumn::Numeric(i) => spec.numeric[i].1.values()[r],
        DesignColumn::Dummy { cat, level } => f64::from(u8::from(spec.categorical[cat].1.codes()[r] == level)),
        DesignColumn::Response => unreachable!(),
    });
    let y = DVector::from_column_slice(spec.response.1.values());
    let qr = x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let beta = r
        .solve_upper_triangular(&(q.transpose() * &y))
        .ok_or_else(|| DpError::DegenerateFit("design matrix is rank deficient".into()))?;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (n - p - 1) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| DpError::DegenerateFit("design matrix is rank deficient".into()))?;
    let cov = &r_inv * r_inv.transpose() * sigma2;
    Ok(RegressionEstimate {
        terms: spec.terms(),
        ci_asymptotic: normal_intervals(&beta, &cov, confidence),
        beta: beta.iter().copied().collect(),
        sigma2,
        n_hat: n as f64,
        confidence,
        ci_bootstrap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionOptions {
    pub confidence: f64,
    /// Bootstrap replicates; 0 skips the bootstrap family.
    pub bootstrap_replicates: usize,
    pub calibration: BootstrapCalibration,
    pub regularize: RegularizeOptions,
    /// Share of epsilon spent on a noisy count when the model has no intercept.
    pub count_share: f64,
    /// Skip all noise. Releases exact statistics; for testing only.
    pub suppress_noise: bool,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            bootstrap_replicates: 1000,
            calibration: BootstrapCalibration::AsWritten,
            regularize: RegularizeOptions::default(),
            count_share: 0.1,
            suppress_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRelease {
    pub estimate: RegressionEstimate,
    pub mechanism: RegressionMechanism,
    pub r: f64,
    pub censor_threshold: Option<f64>,
    pub provenance: String,
    /// Coefficients on the unit scale.
    pub unit_beta: Vec<f64>,
}

fn original_estimate(
    scale: &ScaleMap,
    terms: Vec<String>,
    fit: &UnitFit,
    confidence: f64,
    boot: Option<&[DVector<f64>]>,
) -> RegressionEstimate {
    let beta = scale.coefficients_to_original(&fit.beta);
    let cov = scale.covariance_to_original(&fit.covariance);
    let ci_bootstrap = boot.map(|draws| {
        let mapped: Vec<DVector<f64>> = draws.iter().map(|d| scale.coefficients_to_original(d)).collect();
        quantile_intervals(&mapped, confidence)
    });
    RegressionEstimate {
        terms,
        ci_asymptotic: normal_intervals(&beta, &cov, confidence),
        beta: beta.iter().copied().collect(),
        sigma2: scale.sigma2_to_original(fit.sigma2),
        n_hat: fit.n_hat,
        confidence,
        ci_bootstrap,
    }
}

/// Full pipeline: rescale, S, plan, perturb, regularize, plug-in fit,
/// bootstrap, scale back. One charge covers everything.
pub fn dp_regression(
    spec: &DesignSpec,
    mechanism: RegressionMechanism,
    params: PrivacyParams,
    options: &RegressionOptions,
    rng: &mut RandomSource,
) -> Result<Release<RegressionRelease>> {
    check_confidence(options.confidence)?;
    if options.bootstrap_replicates != 0 && options.bootstrap_replicates < 100 {
        return Err(invalid_param("the bootstrap needs 0 or at least 100 replicates"));
    }
    let unit = rescale_design(spec)?;
    let s = compute_s(&unit);
    let plan = sensitivity_plan(&unit.layout);
    let base = rng.derive_labeled("regression");

    let (matrix_params, n_hat) = if spec.intercept || options.suppress_noise {
        (params, if spec.intercept { None } else { Some(spec.n_rows() as f64) })
    } else {
        if !(options.count_share > 0.0 && options.count_share < 1.0) {
            return Err(invalid_param("count_share must lie in (0, 1)"));
        }
        let eps_n = params.epsilon() * options.count_share;
        let mut count_rng = base.derive_labeled("count");
        let noisy_n = spec.n_rows() as f64 + count_rng.laplace(1.0 / eps_n);
        (PrivacyParams::new(params.epsilon() - eps_n, params.delta())?, Some(noisy_n))
    };

    let mut noise_rng = base.derive_labeled("perturb");
    let noisy = if options.suppress_noise {
        add_noise(&s, mechanism, NoiseLaw::Zero { dim: plan.dim() }, "no noise".into(), &options.regularize, &mut noise_rng)
    } else {
        perturb_s(&s, &plan, mechanism, matrix_params, &options.regularize, &mut noise_rng)?
    };
    let mut reg_rng = base.derive_labeled("regularize");
    let noisy = regularize(noisy, &options.regularize, matrix_params.delta(), &mut reg_rng)?;
    let fit = fit_plugin(&noisy.matrix, n_hat)?;
    let boot = if options.bootstrap_replicates > 0 {
        Some(bootstrap_draws(
            &fit,
            &noisy.law,
            options.bootstrap_replicates,
            options.calibration,
            &base.derive_labeled("bootstrap"),
        )?)
    } else {
        None
    };
    let estimate = original_estimate(&unit.scale, unit.terms.clone(), &fit, options.confidence, boot.as_deref());
    let NoisySufficientStatistic { r, censor_threshold, provenance, .. } = noisy;
    Ok(Release {
        value: RegressionRelease {
            estimate,
            mechanism,
            r,
            censor_threshold,
            provenance,
            unit_beta: fit.beta.iter().copied().collect(),
        },
        charge: ChargeRecord::sequential("regression", params),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhmEstimate {
    pub terms: Vec<String>,
    /// Mean of the per-draw estimates.
    pub beta: Vec<f64>,
    /// Sample covariance of the per-draw estimates.
    pub covariance: Vec<Vec<f64>>,
    pub ci: Vec<Interval>,
    pub draws: usize,
    pub confidence: f64,
}

/// K independent Gaussian-noised fits at (epsilon/K, delta/K) each, with
/// noise calibrated through zCDP; the sampling distribution is approximated
/// by a normal with the K-sample mean and covariance.
pub fn bhm_regression(
    spec: &DesignSpec,
    params: PrivacyParams,
    draws: usize,
    confidence: f64,
    regularize_options: &RegularizeOptions,
    suppress_noise: bool,
    rng: &mut RandomSource,
) -> Result<Release<BhmEstimate>> {
    check_confidence(confidence)?;
    if draws < 2 {
        return Err(invalid_param("BHM regression needs at least two draws"));
    }
    if !spec.intercept {
        return Err(invalid_param("BHM regression needs an intercept for the noisy sample size"));
    }
    if params.delta() <= 0.0 && !suppress_noise {
        return Err(DpError::Unsupported("BHM Gaussian draws need delta > 0".into()));
    }
    let unit = rescale_design(spec)?;
    let s = compute_s(&unit);
    let plan = sensitivity_plan(&unit.layout);
    let per_draw = params.split(draws)?;
    let law = if suppress_noise {
        NoiseLaw::Zero { dim: plan.dim() }
    } else {
        let rho = approx_dp_to_zcdp(per_draw)?.rho();
        NoiseLaw::EntryGaussian { plan: plan.clone(), sigma: plan.l2_total() / (2.0 * rho).sqrt() }
    };
    let base = rng.derive_labeled("bhm");
    let estimates = (0..draws as u64)
        .map(|k| {
            let mut r = base.derive(k);
            let noisy = add_noise(&s, RegressionMechanism::AnalyticGaussian, law.clone(), String::new(), regularize_options, &mut r);
            let noisy = regularize(noisy, regularize_options, per_draw.delta(), &mut r)?;
            let fit = fit_plugin(&noisy.matrix, None)?;
            Ok(unit.scale.coefficients_to_original(&fit.beta))
        })
        .collect::<Result<Vec<_>>>()?;
    let p = estimates[0].len();
    let kf = draws as f64;
    let mean = estimates.iter().fold(DVector::zeros(p), |acc, e| acc + e) / kf;
    let mut cov = DMatrix::zeros(p, p);
    for e in &estimates {
        let d = e - &mean;
        cov += &d * d.transpose();
    }
    cov /= kf - 1.0;
    Ok(Release {
        value: BhmEstimate {
            terms: unit.terms,
            ci: normal_intervals(&mean, &cov, confidence),
            beta: mean.iter().copied().collect(),
            covariance: (0..p).map(|i| cov.row(i).iter().copied().collect()).collect(),
            draws,
            confidence,
        },
        charge: ChargeRecord::sequential("regression_bhm", params),
    })
}
