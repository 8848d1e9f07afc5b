//! Private linear regression of the capital-gains ratio on the synthetic
//! tax-like data with every mechanism, against the confidential fit.

use dpvs::eval::{ci_overlap, ci_ratio, sign_significance_match, synth_taxlike_data};
use dpvs::regression::{
    bhm_regression, confidential_ols, dp_regression, DesignSpec, RegressionMechanism, RegressionOptions,
    RegularizeOptions,
};
use dpvs::{PrivacyParams, RandomSource, Result};

fn main() -> Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let table = synth_taxlike_data(n, 1)?;
    let spec = DesignSpec::from_table(
        &table,
        "cg_ratio",
        &["marginal_rate", "log_dividends", "log_agi"],
        &["age65"],
        true,
    )?;
    let ols = confidential_ols(&spec, 0.95)?;
    println!("confidential fit on {n} rows:");
    for (j, t) in ols.terms.iter().enumerate() {
        let ci = ols.ci_asymptotic[j];
        println!("  {t:<14} {:>9.4} [{:>8.4}, {:>8.4}]", ols.beta[j], ci.lower, ci.upper);
    }

    let options = RegressionOptions::default();
    for mech in RegressionMechanism::ALL {
        // The Wishart mechanism is only defined for eps < 1.
        let params = match mech {
            RegressionMechanism::Wishart => PrivacyParams::new(0.9, 1e-6)?,
            _ => PrivacyParams::new(5.0, 1e-6)?,
        };
        let mut rng = RandomSource::new(9, 0);
        let rel = match dp_regression(&spec, mech, params, &options, &mut rng) {
            Ok(r) => r.value,
            Err(e) => {
                println!("\n{}: {e}", mech.tag());
                continue;
            }
        };
        let e = &rel.estimate;
        println!("\n{} at eps {}: r = {:.3e}, n_hat = {:.0}", mech.tag(), params.epsilon(), rel.r, e.n_hat);
        println!("  {:<14} {:>9} {:>8} {:>8} {:>8} {:>5}", "term", "beta", "CIR", "CIO", "CIR(bs)", "sign");
        let boot = e.ci_bootstrap.as_ref().expect("bootstrap requested");
        for (j, t) in e.terms.iter().enumerate() {
            let m = sign_significance_match(ols.beta[j], &ols.ci_asymptotic[j], e.beta[j], &e.ci_asymptotic[j]);
            println!(
                "  {t:<14} {:>9.4} {:>8.3} {:>8.3} {:>8.1} {:>5}",
                e.beta[j],
                ci_ratio(&ols.ci_asymptotic[j], &e.ci_asymptotic[j])?,
                ci_overlap(&ols.ci_asymptotic[j], &e.ci_asymptotic[j])?,
                ci_ratio(&ols.ci_asymptotic[j], &boot[j])?,
                m.sign
            );
        }
    }

    let mut rng = RandomSource::new(10, 0);
    let bhm = bhm_regression(&spec, PrivacyParams::new(5.0, 1e-6)?, 25, 0.95, &RegularizeOptions::default(), false, &mut rng)?;
    println!("\nBHM with {} draws:", bhm.value.draws);
    for (j, t) in bhm.value.terms.iter().enumerate() {
        let ci = bhm.value.ci[j];
        println!("  {t:<14} {:>9.4} [{:>8.4}, {:>8.4}]", bhm.value.beta[j], ci.lower, ci.upper);
    }
    Ok(())
}
