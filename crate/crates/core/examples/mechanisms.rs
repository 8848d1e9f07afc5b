//! Noise primitives: Laplace and Gaussian additive noise, the calibrations
//! behind them, zCDP conversions and the exponential mechanism.

use dpvs::privacy::{
    analytic_gaussian_sigma, exponential_mechanism, exponential_probabilities, gaussian_mechanism, gaussian_sigma,
    laplace_mechanism, laplace_scale, pure_dp_to_zcdp, renyi_sigma_for_counts, zcdp_to_approx_dp,
    GaussianCalibration, ScoredCandidate,
};
use dpvs::{GlobalSensitivity, PrivacyParams, RandomSource, Result, ZcdpParams};

fn main() -> Result<()> {
    let mut rng = RandomSource::new(2024, 0);
    let count = GlobalSensitivity::scalar(1.0)?;

    println!("Laplace scale for a count:");
    for eps in [0.1, 1.0, 5.0] {
        let b = laplace_scale(count, eps)?;
        let noisy = laplace_mechanism(&[1234.0], count, eps, &mut rng)?;
        println!("  eps {eps:>4}: b = {b:8.3}, release of 1234 -> {:.2}", noisy[0]);
    }

    println!("\nGaussian sigma for a count at delta = 1e-6:");
    for eps in [0.5, 1.0, 5.0] {
        let p = PrivacyParams::new(eps, 1e-6)?;
        let classical = if eps < 1.0 { format!("{:8.3}", gaussian_sigma(count, p)?) } else { "     n/a".into() };
        let analytic = analytic_gaussian_sigma(count, p)?;
        let noisy = gaussian_mechanism(&[1234.0], count, p, &mut rng, GaussianCalibration::Analytic)?;
        println!("  eps {eps:>4}: classical {classical}, analytic {analytic:8.3}, release {:.2}", noisy[0]);
    }

    println!("\nRenyi calibration of m counts released together (eps 5, delta 1e-6):");
    for m in [1, 10, 150] {
        let cal = renyi_sigma_for_counts(m, PrivacyParams::new(5.0, 1e-6)?)?;
        println!("  m {m:>3}: sigma {:7.3} at alpha {:.1} (certified eps {:.4})", cal.sigma, cal.alpha, cal.epsilon);
    }

    println!("\nzCDP round trip:");
    let rho = pure_dp_to_zcdp(1.0)?;
    let composed = ZcdpParams::new(rho.rho() * 10.0)?;
    let back = zcdp_to_approx_dp(composed, 1e-6)?;
    println!("  1-DP is {:.3}-zCDP; ten of them give ({:.3}, 1e-6)-DP", rho.rho(), back.epsilon());

    println!("\nExponential mechanism over five candidates (utility sensitivity 1, eps 2):");
    let cands: Vec<ScoredCandidate<&str>> = [("a", 0.0), ("b", 1.0), ("c", 3.0), ("d", 2.5), ("e", -1.0)]
        .into_iter()
        .map(|(value, utility)| ScoredCandidate { value, utility })
        .collect();
    let utilities: Vec<f64> = cands.iter().map(|c| c.utility).collect();
    let probs = exponential_probabilities(&utilities, 1.0, 2.0)?;
    let mut hits = vec![0usize; cands.len()];
    for _ in 0..100_000 {
        let pick = exponential_mechanism(&cands, 1.0, 2.0, &mut rng)?;
        hits[cands.iter().position(|c| c.value == pick.value).unwrap()] += 1;
    }
    for ((c, p), h) in cands.iter().zip(&probs).zip(&hits) {
        println!("  {} u={:>4}: p = {p:.4}, observed {:.4}", c.value, c.utility, *h as f64 / 1e5);
    }
    Ok(())
}
