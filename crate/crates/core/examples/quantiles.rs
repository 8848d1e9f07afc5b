//! Private quantiles of synthetic income: exponential mechanism with a pure
//! or zCDP budget split, and smooth-sensitivity Laplace.

use dpvs::eval::synth_taxlike_data;
use dpvs::summary::{dp_quantile_smooth, dp_quantiles, per_quantile_epsilon, QuantileMode};
use dpvs::{PrivacyParams, RandomSource, Result};

fn main() -> Result<()> {
    let table = synth_taxlike_data(20_000, 4)?;
    let income = table.numeric("income")?;
    let probs = [0.1, 0.25, 0.5, 0.75, 0.9, 0.99];
    let mut sorted = income.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let truth: Vec<f64> = probs.iter().map(|q| sorted[((q * sorted.len() as f64).ceil() as usize).max(1) - 1]).collect();

    let params = PrivacyParams::new(1.0, 1e-6)?;
    for mode in [QuantileMode::PureSplit, QuantileMode::ZcdpCompose] {
        println!("{mode:?}: each quantile gets eps {:.4}", per_quantile_epsilon(probs.len(), params, mode)?);
    }
    let mut rng = RandomSource::new(3, 0);
    let pure = dp_quantiles(income, &probs, QuantileMode::PureSplit, PrivacyParams::pure(1.0)?, &mut rng)?.value;
    let zcdp = dp_quantiles(income, &probs, QuantileMode::ZcdpCompose, params, &mut rng)?.value;
    let each = params.split(probs.len())?;
    let smooth = probs
        .iter()
        .map(|q| dp_quantile_smooth(income, *q, each, &mut rng).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;

    println!("\n{:>5} {:>12} {:>12} {:>12} {:>12}", "q", "truth", "exp-pure", "exp-zcdp", "smooth");
    for i in 0..probs.len() {
        println!("{:>5} {:>12.0} {:>12.0} {:>12.0} {:>12.0}", probs[i], truth[i], pure[i], zcdp[i], smooth[i]);
    }
    Ok(())
}
