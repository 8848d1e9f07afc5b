//! Private means with confidence intervals, compared with the confidential
//! interval by width ratio (CIR) and overlap (CIO).

use dpvs::eval::{ci_overlap, ci_ratio, synth_taxlike_data};
use dpvs::regression::Interval;
use dpvs::summary::{confidential_mean_ci, dp_mean_bhm, dp_mean_noisymad, dp_mean_noisyvar, NoisyMeanConfig};
use dpvs::{PrivacyParams, RandomSource, Result};

fn main() -> Result<()> {
    let table = synth_taxlike_data(100_000, 2)?;
    let income = table.numeric("income")?;
    let (lo, hi) = confidential_mean_ci(income, 0.95)?;
    let conf = Interval::new(lo, hi);
    println!("confidential mean {:.1}, 95% CI [{lo:.1}, {hi:.1}]\n", income.mean());

    let cfg = NoisyMeanConfig::default();
    println!("{:>5} {:<9} {:>10} {:>23} {:>6} {:>6}", "eps", "method", "point", "interval", "CIR", "CIO");
    for eps in [0.1f64, 1.0, 10.0] {
        let mut rng = RandomSource::new(5, eps.to_bits());
        let releases = [
            dp_mean_noisyvar(income, eps, 0.95, &cfg, &mut rng)?.value,
            dp_mean_noisymad(income, eps, 0.95, &cfg, &mut rng)?.value,
            dp_mean_bhm(income, PrivacyParams::new(eps, 1e-3)?, 1, 0.95, &mut rng)?.value,
        ];
        for m in releases {
            let noisy = Interval::new(m.ci_lower, m.ci_upper);
            println!(
                "{eps:>5} {:<9} {:>10.1} [{:>10.1}, {:>10.1}] {:>6.3} {:>6.3}",
                format!("{:?}", m.method),
                m.point,
                m.ci_lower,
                m.ci_upper,
                ci_ratio(&conf, &noisy)?,
                ci_overlap(&conf, &noisy)?
            );
        }
    }
    Ok(())
}
