use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::plan::SensitivityPlan;
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::{analytic_gaussian_sigma, GlobalSensitivity, PrivacyParams};
use crate::rng::RandomSource;

/// A matrix counts as positive definite when its smallest eigenvalue
/// exceeds this value.
pub const PD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionMechanism {
    Laplace,
    AnalyticGaussian,
    Wishart,
    RegNormal,
    RegSphericalLaplace,
}

impl RegressionMechanism {
    pub const ALL: [RegressionMechanism; 5] = [
        RegressionMechanism::Laplace,
        RegressionMechanism::AnalyticGaussian,
        RegressionMechanism::Wishart,
        RegressionMechanism::RegNormal,
        RegressionMechanism::RegSphericalLaplace,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            RegressionMechanism::Laplace => "laplace",
            RegressionMechanism::AnalyticGaussian => "analytic-gaussian",
            RegressionMechanism::Wishart => "wishart",
            RegressionMechanism::RegNormal => "reg-normal",
            RegressionMechanism::RegSphericalLaplace => "reg-spherical-laplace",
        }
    }
}

/// Law of the noise matrix H; can be resampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    /// H = 0.
    Zero { dim: usize },
    /// i.i.d. Laplace(scale) on noised entries, mirrored to duplicates.
    EntryLaplace { plan: SensitivityPlan, scale: f64 },
    /// i.i.d. N(0, sigma^2) on noised entries, mirrored to duplicates.
    EntryGaussian { plan: SensitivityPlan, sigma: f64 },
    /// Wishart(B^2 I, k) with structural zeros reset.
    Wishart { plan: SensitivityPlan, k: usize, scale2: f64 },
    /// (G + G^T)/2 with i.i.d. N(0, sigma^2) entries in G.
    SymmetricNormal { dim: usize, sigma: f64 },
    /// (G + G^T)/2 with G drawn from density proportional to
    /// exp(-||G||_F / scale).
    SymmetricSphericalLaplace { dim: usize, scale: f64 },
}

impl NoiseLaw {
    pub fn dim(&self) -> usize {
        match self {
            NoiseLaw::Zero { dim } => *dim,
            NoiseLaw::EntryLaplace { plan, .. }
            | NoiseLaw::EntryGaussian { plan, .. }
            | NoiseLaw::Wishart { plan, .. } => plan.dim(),
            NoiseLaw::SymmetricNormal { dim, .. } | NoiseLaw::SymmetricSphericalLaplace { dim, .. } => *dim,
        }
    }

    pub fn sample(&self, rng: &mut RandomSource) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            NoiseLaw::Zero { .. } => DMatrix::zeros(d, d),
            NoiseLaw::EntryLaplace { plan, scale } => entry_noise(plan, || rng.laplace(*scale)),
            NoiseLaw::EntryGaussian { plan, sigma } => entry_noise(plan, || sigma * rng.standard_normal()),
            NoiseLaw::Wishart { plan, k, scale2 } => {
                let g = DMatrix::from_fn(*k, d, |_, _| rng.standard_normal());
                let mut w = g.transpose() * g * *scale2;
                for (i, j) in plan.structural_zeros() {
                    w[(i, j)] = 0.0;
                    w[(j, i)] = 0.0;
                }
                symmetrize(&w)
            }
            NoiseLaw::SymmetricNormal { sigma, .. } => {
                let g = DMatrix::from_fn(d, d, |_, _| sigma * rng.standard_normal());
                symmetrize(&g)
            }
            NoiseLaw::SymmetricSphericalLaplace { scale, .. } => {
                let dims = d * d;
                let mut g = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
                let norm = g.norm();
                let radius = Gamma::new(dims as f64, *scale).expect("valid gamma parameters").sample(rng);
                g *= radius / norm;
                symmetrize(&g)
            }
        }
    }

    /// Expected noise matrix is zero (all but Wishart).
    pub fn is_centered(&self) -> bool {
        !matches!(self, NoiseLaw::Wishart { .. })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn entry_noise(plan: &SensitivityPlan, mut draw: impl FnMut() -> f64) -> DMatrix<f64> {
    let d = plan.dim();
    let mut h = DMatrix::zeros(d, d);
    for (i, j) in plan.noised_entries() {
        let v = draw();
        h[(i, j)] = v;
        h[(j, i)] = v;
    }
    for ((i, j), (a, b)) in plan.duplicates() {
        let v = h[(a, b)];
        h[(i, j)] = v;
        h[(j, i)] = v;
    }
    h
}

/// Degrees of freedom of the Wishart noise for dimension `dim`.
pub fn wishart_degrees_of_freedom(dim: usize, params: PrivacyParams) -> usize {
    let eps = params.epsilon();
    (dim as f64 + 14.0 * (4.0 / params.delta()).ln() / (eps * eps)).floor() as usize + 1
}

/// Shift r with Pr[lambda_min(W) >= r] >= 1 - delta for W ~ Wishart(B^2 I, k).
pub fn wishart_shift(dim: usize, k: usize, scale2: f64, delta: f64) -> f64 {
    let root = (k as f64).sqrt() - (dim as f64).sqrt() - (2.0 * (1.0 / delta).ln()).sqrt();
    scale2 * root.max(0.0).powi(2)
}

/// Settings for the simulated eigenvalue quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizeOptions {
    pub p0: f64,
    pub sims: usize,
}

impl Default for RegularizeOptions {
    fn default() -> Self {
        Self { p0: 0.99, sims: 1000 }
    }
}

impl RegularizeOptions {
    fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(invalid_param("p0 must lie in (0, 1)"));
        }
        if self.sims == 0 {
            return Err(invalid_param("at least one simulation draw is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySufficientStatistic {
    /// S + H - r I (after regularization) or the censored matrix.
    pub matrix: DMatrix<f64>,
    pub mechanism: RegressionMechanism,
    pub law: NoiseLaw,
    /// Diagonal shift subtracted by `regularize`.
    pub r: f64,
    /// Eigenvalue floor applied by the censoring mechanisms.
    pub censor_threshold: Option<f64>,
    pub regularized: bool,
    /// How the noise calibration was derived.
    pub provenance: String,
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

/// Empirical quantile (inverse empirical CDF) of `xs`.
pub(crate) fn empirical_quantile(xs: &mut [f64], p: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let idx = ((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1;
    xs[idx]
}

fn noise_law(plan: &SensitivityPlan, mechanism: RegressionMechanism, params: PrivacyParams) -> Result<(NoiseLaw, String)> {
    let d = plan.dim();
    let b = plan.row_l2_bound();
    Ok(match mechanism {
        RegressionMechanism::Laplace => {
            let scale = plan.l1_total() / params.epsilon();
            (
                NoiseLaw::EntryLaplace { plan: plan.clone(), scale },
                format!("Laplace on {} units, l1 = {}, scale = {scale}", plan.units(), plan.l1_total()),
            )
        }
        RegressionMechanism::AnalyticGaussian => {
            let sigma = analytic_gaussian_sigma(GlobalSensitivity::new(plan.l1_total(), plan.l2_total())?, params)?;
            (
                NoiseLaw::EntryGaussian { plan: plan.clone(), sigma },
                format!("analytic Gaussian on {} units, l2 = {}, sigma = {sigma}", plan.units(), plan.l2_total()),
            )
        }
        RegressionMechanism::Wishart => {
            if params.epsilon() >= 1.0 {
                return Err(DpError::Unsupported(format!(
                    "the Wishart mechanism requires epsilon < 1 (got {})",
                    params.epsilon()
                )));
            }
            if params.delta() <= 0.0 {
                return Err(DpError::Unsupported("the Wishart mechanism requires delta > 0".into()));
            }
            let k = wishart_degrees_of_freedom(d, params);
            let scale2 = b * b;
            (
                NoiseLaw::Wishart { plan: plan.clone(), k, scale2 },
                format!(
                    "Wishart(B^2 I, k) with B^2 = {scale2}, k = floor(d + 14 ln(4/delta)/eps^2) + 1 = {k}; \
                     shift r = B^2 (sqrt k - sqrt d - sqrt(2 ln(1/delta)))^2; constants reconstructed, not \
                     checked against the original algorithm"
                ),
            )
        }
        RegressionMechanism::RegNormal => {
            // ||z z^T||_F = ||z||^2 <= d on the unit scale.
            let l2 = b * b;
            let sigma = analytic_gaussian_sigma(GlobalSensitivity::new(l2 * (d as f64), l2)?, params)?;
            (
                NoiseLaw::SymmetricNormal { dim: d, sigma },
                format!("symmetrized Normal, Frobenius sensitivity {l2}, sigma = {sigma}, eigenvalue censoring"),
            )
        }
        RegressionMechanism::RegSphericalLaplace => {
            let l2 = b * b;
            let scale = l2 / params.epsilon();
            (
                NoiseLaw::SymmetricSphericalLaplace { dim: d, scale },
                format!("symmetrized spherical Laplace, Frobenius sensitivity {l2}, radius ~ Gamma({}, {scale}), eigenvalue censoring", d * d),
            )
        }
    })
}

/// Adds mechanism noise to S. Censoring mechanisms also floor the spectrum
/// of S + H at the p0-quantile of simulated ||H||_2.
pub fn perturb_s(
    s: &DMatrix<f64>,
    plan: &SensitivityPlan,
    mechanism: RegressionMechanism,
    params: PrivacyParams,
    options: &RegularizeOptions,
    rng: &mut RandomSource,
) -> Result<NoisySufficientStatistic> {
    options.validate()?;
    if s.nrows() != plan.dim() || s.ncols() != plan.dim() {
        return Err(DpError::InvalidInput("S and plan dimensions differ".into()));
    }
    let (law, provenance) = noise_law(plan, mechanism, params)?;
    Ok(add_noise(s, mechanism, law, provenance, options, rng))
}

pub(crate) fn add_noise(
    s: &DMatrix<f64>,
    mechanism: RegressionMechanism,
    law: NoiseLaw,
    provenance: String,
    options: &RegularizeOptions,
    rng: &mut RandomSource,
) -> NoisySufficientStatistic {
    let mut noise_rng = rng.derive_labeled("noise");
    let h = law.sample(&mut noise_rng);
    let noisy = s + h;
    match mechanism {
        RegressionMechanism::RegNormal | RegressionMechanism::RegSphericalLaplace => {
            let mut sim_rng = rng.derive_labeled("censor");
            let mut norms: Vec<f64> = (0..options.sims).map(|_| spectral_norm(&law.sample(&mut sim_rng))).collect();
            let tau = empirical_quantile(&mut norms, options.p0).max(2.0 * PD_TOLERANCE);
            let eig = SymmetricEigen::new(noisy);
            let floored = eig.eigenvalues.map(|l| l.max(tau));
            let m = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
            NoisySufficientStatistic {
                matrix: symmetrize(&m),
                mechanism,
                law,
                r: 0.0,
                censor_threshold: Some(tau),
                regularized: false,
                provenance,
            }
        }
        _ => NoisySufficientStatistic {
            matrix: noisy,
            mechanism,
            law,
            r: 0.0,
            censor_threshold: None,
            regularized: false,
            provenance,
        },
    }
}

/// Makes the noisy statistic positive definite as S_H - r I.
///
/// Wishart: r from the high-probability lower bound on the Wishart spectrum.
/// Others: r = 0 when already positive definite, else the (1 - p0)-quantile
/// of simulated lambda_min(H). If that still fails, r = 3 lambda_min(S_H);
/// if even that fails (lambda_min near zero), r = lambda_min(S_H) minus a
/// small margin.
pub fn regularize(
    mut noisy: NoisySufficientStatistic,
    options: &RegularizeOptions,
    delta: f64,
    rng: &mut RandomSource,
) -> Result<NoisySufficientStatistic> {
    options.validate()?;
    let d = noisy.matrix.nrows();
    let ident = DMatrix::<f64>::identity(d, d);
    let lam = min_eigenvalue(&noisy.matrix);
    let mut r = 0.0;
    if let NoiseLaw::Wishart { k, scale2, .. } = noisy.law {
        r = wishart_shift(d, k, scale2, delta);
    } else if lam <= PD_TOLERANCE {
        let mut sim_rng = rng.derive_labeled("min-eigenvalue");
        let mut mins: Vec<f64> = (0..options.sims).map(|_| min_eigenvalue(&noisy.law.sample(&mut sim_rng))).collect();
        r = empirical_quantile(&mut mins, 1.0 - options.p0);
    }
    if min_eigenvalue(&(&noisy.matrix - &ident * r)) <= PD_TOLERANCE {
        r = 3.0 * lam;
        if min_eigenvalue(&(&noisy.matrix - &ident * r)) <= PD_TOLERANCE {
            let margin = 1e-8 * noisy.matrix.diagonal().amax().max(1.0);
            r = lam - margin;
        }
    }
    noisy.matrix -= &ident * r;
    noisy.r = r;
    noisy.regularized = true;
    if min_eigenvalue(&noisy.matrix) <= PD_TOLERANCE {
        return Err(DpError::Calibration("regularization failed to reach positive definiteness".into()));
    }
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{DesignColumn, EntryRole};
    use crate::regression::plan::sensitivity_plan;
    use approx::assert_relative_eq;

    fn layout() -> Vec<DesignColumn> {
        vec![
            DesignColumn::Intercept,
            DesignColumn::Numeric(0),
            DesignColumn::Dummy { cat: 0, level: 1 },
            DesignColumn::Dummy { cat: 0, level: 2 },
            DesignColumn::Response,
        ]
    }

    fn random_s(rng: &mut RandomSource, n: usize) -> DMatrix<f64> {
        let z = DMatrix::from_fn(n, 5, |_, j| match j {
            0 => 1.0,
            2 | 3 => 0.0,
            _ => rng.unit(),
        });
        let mut z = z;
        for r in 0..n {
            let lvl = (rng.unit() * 3.0) as usize;
            if lvl > 0 {
                z[(r, 1 + lvl)] = 1.0;
            }
        }
        z.transpose() * &z
    }

    #[test]
    fn duplicates_share_noise_and_zeros_stay_zero() {
        let plan = sensitivity_plan(&layout());
        let s = random_s(&mut RandomSource::new(1, 0), 30);
        let params = PrivacyParams::new(1.0, 1e-5).unwrap();
        let rng = RandomSource::new(2, 0);
        for mech in [RegressionMechanism::Laplace, RegressionMechanism::AnalyticGaussian] {
            for rep in 0..100 {
                let mut r = rng.derive(rep);
                let noisy = perturb_s(&s, &plan, mech, params, &RegularizeOptions::default(), &mut r).unwrap();
                let m = &noisy.matrix;
                assert_eq!(m[(2, 2)], m[(0, 2)]);
                assert_eq!(m[(3, 3)], m[(0, 3)]);
                assert_eq!(m[(2, 3)], 0.0);
                assert_eq!(m, &m.transpose());
            }
        }
    }

    #[test]
    fn all_mechanisms_symmetric() {
        let plan = sensitivity_plan(&layout());
        let s = random_s(&mut RandomSource::new(3, 0), 30);
        let opts = RegularizeOptions { p0: 0.99, sims: 50 };
        for mech in RegressionMechanism::ALL {
            let params = PrivacyParams::new(0.5, 1e-6).unwrap();
            let noisy = perturb_s(&s, &plan, mech, params, &opts, &mut RandomSource::new(4, 0)).unwrap();
            let m = &noisy.matrix;
            assert!((m - m.transpose()).amax() < 1e-9 * m.amax(), "{mech:?}");
        }
    }

    #[test]
    fn zero_noise_limit() {
        let plan = sensitivity_plan(&layout());
        let s = random_s(&mut RandomSource::new(5, 0), 30);
        let params = PrivacyParams::new(1e9, 1e-5).unwrap();
        for mech in [RegressionMechanism::Laplace, RegressionMechanism::AnalyticGaussian] {
            let noisy = perturb_s(&s, &plan, mech, params, &RegularizeOptions::default(), &mut RandomSource::new(6, 0)).unwrap();
            // Gaussian sigma only falls like 1/sqrt(eps).
            let tol = if mech == RegressionMechanism::Laplace { 1e-6 } else { 1e-3 };
            assert!((&noisy.matrix - &s).amax() < tol, "{mech:?}");
        }
    }

    #[test]
    fn wishart_rejects_large_epsilon() {
        let plan = sensitivity_plan(&layout());
        let s = random_s(&mut RandomSource::new(7, 0), 10);
        let err = perturb_s(
            &s,
            &plan,
            RegressionMechanism::Wishart,
            PrivacyParams::new(5.0, 1e-6).unwrap(),
            &RegularizeOptions::default(),
            &mut RandomSource::new(0, 0),
        );
        assert!(matches!(err, Err(DpError::Unsupported(_))));
    }

    #[test]
    fn wishart_constants() {
        let p = PrivacyParams::new(0.5, 1e-6).unwrap();
        // 14 ln(4e6) / 0.25 = 851.39...
        let expected = (6.0 + 14.0 * (4e6f64).ln() / 0.25).floor() as usize + 1;
        assert_eq!(wishart_degrees_of_freedom(6, p), expected);
        let k = 400;
        let r = wishart_shift(6, k, 6.0, 1e-6);
        assert_relative_eq!(r, 6.0 * (20.0 - 6f64.sqrt() - (2.0 * (1e6f64).ln()).sqrt()).powi(2));
        assert_eq!(wishart_shift(6, 7, 6.0, 1e-6), 0.0);
    }

    #[test]
    fn regularize_examples() {
        let plan = sensitivity_plan(&layout());
        let pd = DMatrix::<f64>::identity(5, 5) * 3.0;
        let law = NoiseLaw::EntryLaplace { plan: plan.clone(), scale: 1.0 };
        let mk = |m: DMatrix<f64>| NoisySufficientStatistic {
            matrix: m,
            mechanism: RegressionMechanism::Laplace,
            law: law.clone(),
            r: 0.0,
            censor_threshold: None,
            regularized: false,
            provenance: String::new(),
        };
        let out = regularize(mk(pd.clone()), &RegularizeOptions::default(), 0.0, &mut RandomSource::new(0, 0)).unwrap();
        assert_eq!(out.r, 0.0);
        assert_eq!(out.matrix, pd);

        // Fallback arithmetic: lambda_min = -2 and r = 3 * (-2) = -6 shifts
        // the spectrum by +6.
        let mut m = DMatrix::<f64>::identity(5, 5) * 10.0;
        m[(4, 4)] = -2.0;
        let opts = RegularizeOptions { p0: 0.5, sims: 10 };
        let zero_law = NoiseLaw::Zero { dim: 5 };
        let stat = NoisySufficientStatistic { law: zero_law, ..mk(m) };
        let out = regularize(stat, &opts, 0.0, &mut RandomSource::new(0, 0)).unwrap();
        assert_relative_eq!(out.r, -6.0);
        assert_relative_eq!(min_eigenvalue(&out.matrix), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn simulated_shift_meets_p0() {
        let plan = sensitivity_plan(&layout());
        let law = NoiseLaw::EntryGaussian { plan, sigma: 2.0 };
        let mut rng = RandomSource::new(8, 0);
        let mut mins: Vec<f64> = (0..1000).map(|_| min_eigenvalue(&law.sample(&mut rng))).collect();
        let r = empirical_quantile(&mut mins, 0.01);
        let mut fresh = RandomSource::new(9, 0);
        let ok = (0..1000)
            .filter(|_| min_eigenvalue(&(law.sample(&mut fresh) - DMatrix::<f64>::identity(5, 5) * r)) > 0.0)
            .count();
        // Binomial(1000, 0.99) rarely falls below 980.
        assert!(ok >= 980, "{ok}");
    }

    #[test]
    fn laplace_entry_noise_scale() {
        let plan = sensitivity_plan(&layout());
        assert!(matches!(plan.role(0, 0), EntryRole::Noised { .. }));
        let law = NoiseLaw::EntryLaplace { plan, scale: 0.5 };
        let mut rng = RandomSource::new(10, 0);
        let n = 100_000;
        let var = (0..n).map(|_| law.sample(&mut rng)[(0, 1)].powi(2)).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() / 0.5 < 0.03, "{var}");
    }

    #[test]
    fn spherical_laplace_radius() {
        // E||G||_F = D * scale for a Gamma(D, scale) radius.
        let law = NoiseLaw::SymmetricSphericalLaplace { dim: 3, scale: 0.1 };
        let mut rng = RandomSource::new(11, 0);
        // Symmetrizing averages G with its transpose, so check the diagonal:
        // each diagonal entry has E[g_ii^2] = E[R^2] / 9 with E[R^2] = D(D+1) s^2.
        let n = 50_000;
        let m2 = (0..n).map(|_| law.sample(&mut rng)[(0, 0)].powi(2)).sum::<f64>() / n as f64;
        let expected = 9.0 * 10.0 * 0.01 / 9.0;
        assert!((m2 - expected).abs() / expected < 0.05, "{m2}");
    }
}
