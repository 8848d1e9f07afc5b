//! 150-bin histogram of synthetic earned income with Laplace and Gaussian
//! noise, scored by the error of all cumulative sums.

use dpvs::eval::synth_taxlike_data;
use dpvs::summary::{cumulative_error_metrics, dp_histogram, true_counts, HistogramMechanism, HistogramSpec};
use dpvs::{PrivacyParams, RandomSource, Result};

fn main() -> Result<()> {
    let table = synth_taxlike_data(100_000, 1)?;
    let income = table.numeric("earned_income")?;
    let spec = HistogramSpec::uniform(0.0, 30_000.0, 150)?;
    let truth = true_counts(income, &spec);

    println!("{:<9} {:>5} {:>10} {:>12} {:>12}", "mechanism", "eps", "noise", "max cum err", "mean cum err");
    for (mech, eps) in [
        (HistogramMechanism::Laplace, 0.1),
        (HistogramMechanism::Laplace, 1.0),
        (HistogramMechanism::Gaussian, 1.0),
        (HistogramMechanism::Gaussian, 5.0),
    ] {
        let params = match mech {
            HistogramMechanism::Laplace => PrivacyParams::pure(eps)?,
            HistogramMechanism::Gaussian => PrivacyParams::new(eps, 1e-6)?,
        };
        let mut rng = RandomSource::new(7, 0);
        let rel = dp_histogram(income, &spec, params, mech, &mut rng)?;
        let err = cumulative_error_metrics(&truth, &rel.value.counts)?;
        println!(
            "{:<9} {eps:>5} {:>10.3} {:>12.2e} {:>12.2e}",
            format!("{mech:?}"),
            rel.value.noise_scale,
            err.max_relative,
            err.mean_relative
        );
    }

    let mut rng = RandomSource::new(8, 0);
    let rel = dp_histogram(income, &spec, PrivacyParams::pure(1.0)?, HistogramMechanism::Laplace, &mut rng)?;
    println!("\nfirst bins ($200 wide), true vs released at eps 1:");
    for b in 0..8 {
        println!("  [{:>5}, {:>5}) {:>7} {:>10.1}", spec.edges()[b], spec.edges()[b + 1], truth[b], rel.value.counts[b]);
    }
    println!("charge: {:?}", rel.charge.composition);
    Ok(())
}
