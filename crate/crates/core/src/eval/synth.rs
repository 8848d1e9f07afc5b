use rand_distr::{Distribution, Exp};

use crate::data::{BoundedColumn, CategoricalColumn, Column, ColumnKind, ColumnSchema, Schema, Table};
use crate::error::{DpError, Result};
use crate::rng::{hash_label, RandomSource};

pub const INCOME_BOUNDS: (f64, f64) = (0.0, 2.0e6);
pub const EARNED_INCOME_BOUNDS: (f64, f64) = (0.0, 30_000.0);
pub const LOG_DIVIDENDS_BOUNDS: (f64, f64) = (9.0, 16.0);
pub const LOG_AGI_BOUNDS: (f64, f64) = (9.0, 18.0);
pub const MARGINAL_RATE_BOUNDS: (f64, f64) = (0.0, 0.5);
pub const CG_RATIO_BOUNDS: (f64, f64) = (-10.0, 20.0);

/// Coefficients of the generating model for `cg_ratio`, in the order
/// intercept, marginal_rate, age65=1, log_dividends, log_agi.
pub const CG_RATIO_MODEL: [f64; 5] = [-1.0, -6.0, 0.4, -0.3, 0.35];
pub const CG_RATIO_NOISE_SD: f64 = 0.25;

/// Tax-return-like microdata.
///
/// * `income`: 15% zeros, otherwise lognormal(10.5, 1).
/// * `earned_income`: 8% zeros, otherwise lognormal(9.2, 0.7) truncated to
///   its bounds.
/// * `age65`: categorical "0"/"1", about 30% "1".
/// * `log_dividends`, `log_agi`: right-skewed log-scale predictors.
/// * `marginal_rate`: two narrow modes at 0.15 and 0.35, most mass on the
///   lower one.
/// * `cg_ratio`: linear in the four predictors above plus normal noise.
pub fn synth_taxlike_data(n: usize, seed: u64) -> Result<Table> {
    if n == 0 {
        return Err(DpError::InvalidInput("n must be positive".into()));
    }
    let mut rng = RandomSource::new(seed, hash_label("synth_taxlike_data"));
    let exp1 = Exp::new(1.0).expect("rate 1 is valid");
    let clamp = |x: f64, b: (f64, f64)| x.clamp(b.0, b.1);

    let mut income = Vec::with_capacity(n);
    let mut earned = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut logdiv = Vec::with_capacity(n);
    let mut logagi = Vec::with_capacity(n);
    let mut rate = Vec::with_capacity(n);
    let mut cg = Vec::with_capacity(n);
    for _ in 0..n {
        income.push(if rng.unit() < 0.15 {
            0.0
        } else {
            clamp((10.5 + rng.standard_normal()).exp(), INCOME_BOUNDS)
        });
        earned.push(if rng.unit() < 0.08 {
            0.0
        } else {
            loop {
                let x = (9.2 + 0.7 * rng.standard_normal()).exp();
                if x <= EARNED_INCOME_BOUNDS.1 {
                    break x;
                }
            }
        });
        let old = rng.unit() < 0.3;
        age.push(usize::from(old));
        let d = clamp(9.44 + 0.9 * exp1.sample(&mut rng), LOG_DIVIDENDS_BOUNDS);
        let a = clamp(d + 1.8 + 0.7 * rng.standard_normal(), LOG_AGI_BOUNDS);
        logdiv.push(d);
        logagi.push(a);
        // Higher AGI makes the upper bracket more likely.
        let p_high = 1.0 / (1.0 + (-(a - 13.5)).exp());
        let r = if rng.unit() < p_high { 0.35 + 0.01 * rng.standard_normal() } else { 0.15 + 0.01 * rng.standard_normal() };
        let r = clamp(r, MARGINAL_RATE_BOUNDS);
        rate.push(r);
        let [b0, b1, b2, b3, b4] = CG_RATIO_MODEL;
        let mean = b0 + b1 * r + b2 * f64::from(u8::from(old)) + b3 * d + b4 * a;
        cg.push(clamp(mean + CG_RATIO_NOISE_SD * rng.standard_normal(), CG_RATIO_BOUNDS));
    }

    let num = |v: Vec<f64>, b: (f64, f64)| -> Result<Column> { Ok(Column::Numeric(BoundedColumn::new(v, b.0, b.1)?)) };
    Table::new(vec![
        ("income".into(), num(income, INCOME_BOUNDS)?),
        ("earned_income".into(), num(earned, EARNED_INCOME_BOUNDS)?),
        ("age65".into(), Column::Categorical(CategoricalColumn::new(vec!["0".into(), "1".into()], "0", age)?)),
        ("log_dividends".into(), num(logdiv, LOG_DIVIDENDS_BOUNDS)?),
        ("log_agi".into(), num(logagi, LOG_AGI_BOUNDS)?),
        ("marginal_rate".into(), num(rate, MARGINAL_RATE_BOUNDS)?),
        ("cg_ratio".into(), num(cg, CG_RATIO_BOUNDS)?),
    ])
}

/// Schema matching [`synth_taxlike_data`].
pub fn taxlike_schema() -> Schema {
    let num = |name: &str, b: (f64, f64)| ColumnSchema {
        name: name.into(),
        kind: ColumnKind::Numeric { lower: b.0, upper: b.1 },
    };
    Schema {
        columns: vec![
            num("income", INCOME_BOUNDS),
            num("earned_income", EARNED_INCOME_BOUNDS),
            ColumnSchema {
                name: "age65".into(),
                kind: ColumnKind::Categorical { levels: vec!["0".into(), "1".into()], reference: "0".into() },
            },
            num("log_dividends", LOG_DIVIDENDS_BOUNDS),
            num("log_agi", LOG_AGI_BOUNDS),
            num("marginal_rate", MARGINAL_RATE_BOUNDS),
            num("cg_ratio", CG_RATIO_BOUNDS),
        ],
    }
}
