use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::regression::Interval;

fn check_interval(i: &Interval, which: &str) -> Result<()> {
    if i.lower.is_finite() && i.upper.is_finite() && i.lower < i.upper {
        Ok(())
    } else {
        Err(DpError::UndefinedMetric(format!("{which} interval [{}, {}] has no positive width", i.lower, i.upper)))
    }
}

/// Confidence-interval overlap: the shared length as a fraction of each
/// interval, averaged. 1 for identical intervals, negative when disjoint.
pub fn ci_overlap(original: &Interval, noisy: &Interval) -> Result<f64> {
    check_interval(original, "original")?;
    check_interval(noisy, "noisy")?;
    let shared = original.upper.min(noisy.upper) - original.lower.max(noisy.lower);
    Ok(0.5 * (shared / original.width() + shared / noisy.width()))
}

/// Width of the noisy interval over the width of the original.
pub fn ci_ratio(original: &Interval, noisy: &Interval) -> Result<f64> {
    check_interval(original, "original")?;
    check_interval(noisy, "noisy")?;
    Ok(noisy.width() / original.width())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceMatch {
    pub sign: bool,
    pub significance: bool,
}

/// Sign agreement (a zero estimate never matches) and agreement on whether
/// each interval contains zero.
pub fn sign_significance_match(
    original: f64,
    original_ci: &Interval,
    noisy: f64,
    noisy_ci: &Interval,
) -> SignificanceMatch {
    let sign = (original > 0.0 && noisy > 0.0) || (original < 0.0 && noisy < 0.0);
    SignificanceMatch { sign, significance: original_ci.contains(0.0) == noisy_ci.contains(0.0) }
}

/// 2x2 table of sign (rows) by significance (columns) agreement, as
/// fractions of the inputs. Index 0 = match, 1 = mismatch.
pub fn confusion_matrix(matches: &[SignificanceMatch]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    if matches.is_empty() {
        return out;
    }
    for m in matches {
        out[usize::from(!m.sign)][usize::from(!m.significance)] += 1.0;
    }
    let n = matches.len() as f64;
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeBias {
    /// bias / |truth|
    Relative(f64),
    /// Truth is zero: plain bias under its own name.
    Absolute(f64),
}

impl RelativeBias {
    pub fn metric_name(&self) -> &'static str {
        match self {
            RelativeBias::Relative(_) => "relative_bias",
            RelativeBias::Absolute(_) => "absolute_bias",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            RelativeBias::Relative(v) | RelativeBias::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub rmse: f64,
    pub bias: f64,
    pub relative_bias: RelativeBias,
}

pub fn rmse_bias(truth: f64, sample: &[f64]) -> Result<ErrorSummary> {
    if sample.is_empty() {
        return Err(DpError::UndefinedMetric("empty sample".into()));
    }
    let n = sample.len() as f64;
    let bias = sample.iter().map(|x| x - truth).sum::<f64>() / n;
    let rmse = (sample.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / n).sqrt();
    let relative_bias =
        if truth == 0.0 { RelativeBias::Absolute(bias) } else { RelativeBias::Relative(bias / truth.abs()) };
    Ok(ErrorSummary { rmse, bias, relative_bias })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(DpError::UndefinedMetric("spearman needs two equal-length samples of size >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DpError::UndefinedMetric("spearman of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Sample median; NaN for an empty slice.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
