use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ci_overlap, ci_ratio, median, rmse_bias, sign_significance_match};
use super::synth::synth_taxlike_data;
use crate::data::{Schema, Table};
use crate::error::{invalid_param, DpError, Result};
use crate::privacy::PrivacyParams;
use crate::regression::{
    bhm_regression, confidential_ols, dp_regression, BootstrapCalibration, DesignSpec, Interval, RegressionMechanism,
    RegressionOptions,
};
use crate::rng::{hash_label, RandomSource};
use crate::summary::{
    confidential_mean_ci, cumulative_error_metrics, dp_histogram, dp_mean_bhm, dp_mean_noisymad, dp_mean_noisyvar,
    dp_quantile_smooth, dp_quantiles, true_counts, HistogramMechanism, HistogramSpec, MeanMethod, NoisyMeanConfig,
    QuantileMode,
};

pub const DEFAULT_HISTOGRAM_BINS: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { n: usize, seed: u64 },
    /// CSV file plus its sidecar JSON schema.
    Csv { path: PathBuf, schema: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Table> {
        match self {
            DatasetSource::Synthetic { n, seed } => synth_taxlike_data(*n, *seed),
            DatasetSource::Csv { path, schema } => Table::from_csv(path, &Schema::from_json_file(schema)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMethod {
    ExpPureSplit,
    ExpZcdp,
    /// Smooth sensitivity, one call per quantile at (epsilon/m, delta/m).
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionMethod {
    Laplace,
    AnalyticGaussian,
    Wishart,
    RegNormal,
    RegSphericalLaplace,
    Bhm,
}

impl RegressionMethod {
    fn mechanism(self) -> Option<RegressionMechanism> {
        match self {
            RegressionMethod::Laplace => Some(RegressionMechanism::Laplace),
            RegressionMethod::AnalyticGaussian => Some(RegressionMechanism::AnalyticGaussian),
            RegressionMethod::Wishart => Some(RegressionMechanism::Wishart),
            RegressionMethod::RegNormal => Some(RegressionMechanism::RegNormal),
            RegressionMethod::RegSphericalLaplace => Some(RegressionMechanism::RegSphericalLaplace),
            RegressionMethod::Bhm => None,
        }
    }
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

fn default_confidence() -> f64 {
    0.95
}

fn default_true() -> bool {
    true
}

fn default_bootstrap() -> usize {
    1000
}

fn default_mean_bhm_draws() -> usize {
    1
}

fn default_regression_bhm_draws() -> usize {
    25
}

fn default_histogram_methods() -> Vec<HistogramMechanism> {
    vec![HistogramMechanism::Laplace, HistogramMechanism::Gaussian]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuerySuite {
    Histogram {
        column: String,
        lower: f64,
        upper: f64,
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default = "default_histogram_methods")]
        methods: Vec<HistogramMechanism>,
    },
    Quantiles {
        column: String,
        probabilities: Vec<f64>,
        methods: Vec<QuantileMethod>,
    },
    Means {
        column: String,
        methods: Vec<MeanMethod>,
        #[serde(default = "default_confidence")]
        confidence: f64,
        #[serde(default = "default_mean_bhm_draws")]
        bhm_draws: usize,
    },
    Regression {
        response: String,
        #[serde(default)]
        numeric: Vec<String>,
        #[serde(default)]
        categorical: Vec<String>,
        #[serde(default = "default_true")]
        intercept: bool,
        methods: Vec<RegressionMethod>,
        #[serde(default = "default_confidence")]
        confidence: f64,
        #[serde(default = "default_bootstrap")]
        bootstrap_replicates: usize,
        #[serde(default = "default_calibration")]
        calibration: BootstrapCalibration,
        #[serde(default = "default_regression_bhm_draws")]
        bhm_draws: usize,
    },
}

fn default_calibration() -> BootstrapCalibration {
    BootstrapCalibration::AsWritten
}

impl QuerySuite {
    pub fn name(&self) -> &'static str {
        match self {
            QuerySuite::Histogram { .. } => "histogram",
            QuerySuite::Quantiles { .. } => "quantiles",
            QuerySuite::Means { .. } => "means",
            QuerySuite::Regression { .. } => "regression",
        }
    }

    fn method_tags(&self) -> Vec<String> {
        fn tag<T: Serialize>(m: &T) -> String {
            serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
        }
        match self {
            QuerySuite::Histogram { methods, .. } => methods.iter().map(tag).collect(),
            QuerySuite::Quantiles { methods, .. } => methods.iter().map(tag).collect(),
            QuerySuite::Means { methods, .. } => methods.iter().map(|m| tag(m).to_lowercase()).collect(),
            QuerySuite::Regression { methods, .. } => methods.iter().map(tag).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub suite: QuerySuite,
    pub epsilons: Vec<f64>,
    pub deltas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid_param("replications must be at least 1"));
        }
        if self.epsilons.is_empty() || self.deltas.is_empty() {
            return Err(invalid_param("epsilon and delta grids must be nonempty"));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(invalid_param("grid epsilons must be positive and finite"));
        }
        if self.deltas.iter().any(|d| !(*d >= 0.0 && *d < 1.0)) {
            return Err(invalid_param("grid deltas must lie in [0, 1)"));
        }
        if self.suite.method_tags().is_empty() {
            return Err(invalid_param("the suite lists no methods"));
        }
        match &self.suite {
            QuerySuite::Histogram { lower, upper, bins, .. } => {
                HistogramSpec::uniform(*lower, *upper, *bins)?;
            }
            QuerySuite::Quantiles { probabilities, .. } => {
                if probabilities.is_empty() || probabilities.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
                    return Err(invalid_param("quantile probabilities must lie in (0, 1)"));
                }
                if probabilities.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid_param("quantile probabilities must be sorted and distinct"));
                }
            }
            QuerySuite::Means { bhm_draws, .. } => {
                if *bhm_draws == 0 {
                    return Err(invalid_param("bhm_draws must be positive"));
                }
            }
            QuerySuite::Regression { bootstrap_replicates, .. } => {
                if *bootstrap_replicates != 0 && *bootstrap_replicates < 100 {
                    return Err(invalid_param("bootstrap_replicates must be 0 or at least 100"));
                }
            }
        }
        Ok(())
    }
}

/// Confidential reference values for the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Histogram { counts: Vec<f64> },
    Quantiles { probabilities: Vec<f64>, values: Vec<f64> },
    Mean { mean: f64, ci: Interval },
    Regression { terms: Vec<String>, beta: Vec<f64>, ci: Vec<Interval> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReleaseOutput {
    Histogram { counts: Vec<f64> },
    Quantiles { values: Vec<f64> },
    Mean { point: f64, ci: Interval },
    Regression { beta: Vec<f64>, ci_asymptotic: Vec<Interval>, ci_bootstrap: Option<Vec<Interval>> },
}

/// One DP release, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRelease {
    pub method: String,
    pub epsilon: f64,
    pub delta: f64,
    pub rep: usize,
    pub output: Option<ReleaseOutput>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutputs {
    pub suite: String,
    pub truth: Truth,
    pub releases: Vec<RawRelease>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub epsilon: f64,
    pub delta: f64,
    pub rep: usize,
    pub metric: String,
    pub value: f64,
    /// Set when `value` is NaN.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub epsilon: f64,
    pub delta: f64,
    pub metric: String,
    pub count: usize,
    pub nan_count: usize,
    pub mean: f64,
    pub median: f64,
}

/// Accuracy of point estimates across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub epsilon: f64,
    pub delta: f64,
    pub estimand: String,
    pub truth: f64,
    pub rmse: f64,
    pub bias: f64,
    /// "relative_bias", or "absolute_bias" when the truth is zero.
    pub bias_metric: String,
    pub bias_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub accuracy: Vec<AccuracyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub code_version: String,
    pub releases: usize,
    pub failed_releases: usize,
    pub records: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub raw: RawOutputs,
    pub records: Vec<MetricsRecord>,
    pub summary: ExperimentSummary,
    pub manifest: RunManifest,
}

struct Task {
    method: String,
    epsilon: f64,
    delta: f64,
    rep: usize,
}

/// Stream id for one (suite, method, epsilon, delta, rep) cell.
pub fn task_stream(suite: &str, method: &str, epsilon: f64, delta: f64, rep: usize) -> u64 {
    hash_label(&format!("{suite}|{method}|{epsilon:e}|{delta:e}|{rep}"))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let table = config.dataset.load()?;
    run_experiment_on(config, &table)
}

/// As [`run_experiment`], on an already loaded table.
pub fn run_experiment_on(config: &ExperimentConfig, table: &Table) -> Result<ExperimentRun> {
    config.validate()?;
    let prepared = Prepared::new(&config.suite, table)?;
    let mut tasks = Vec::new();
    for method in config.suite.method_tags() {
        for &epsilon in &config.epsilons {
            for &delta in &config.deltas {
                for rep in 0..config.replications {
                    tasks.push(Task { method: method.clone(), epsilon, delta, rep });
                }
            }
        }
    }
    let suite = config.suite.name();
    let releases: Vec<RawRelease> = tasks
        .par_iter()
        .map(|t| {
            let mut rng = RandomSource::new(config.seed, task_stream(suite, &t.method, t.epsilon, t.delta, t.rep));
            let result = PrivacyParams::new(t.epsilon, t.delta)
                .and_then(|params| prepared.release(&config.suite, &t.method, params, &mut rng));
            let (output, error) = match result {
                Ok(o) => (Some(o), None),
                Err(e) => (None, Some(e.to_string())),
            };
            RawRelease { method: t.method.clone(), epsilon: t.epsilon, delta: t.delta, rep: t.rep, output, error }
        })
        .collect();
    let raw = RawOutputs { suite: suite.to_string(), truth: prepared.truth.clone(), releases };
    let records = compute_metrics(&raw);
    let summary = summarize(&raw, &records);
    let manifest = RunManifest {
        config: config.clone(),
        seed: config.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        releases: raw.releases.len(),
        failed_releases: raw.releases.iter().filter(|r| r.output.is_none()).count(),
        records: records.len(),
        notes: notes(&config.suite),
    };
    Ok(ExperimentRun { raw, records, summary, manifest })
}

fn notes(suite: &QuerySuite) -> Vec<String> {
    let mut out = Vec::new();
    if let QuerySuite::Histogram { lower, upper, bins, .. } = suite {
        if *bins == DEFAULT_HISTOGRAM_BINS {
            out.push(format!(
                "histogram uses the default of {DEFAULT_HISTOGRAM_BINS} equal-width bins on [{lower}, {upper}]; the bin count is inferred from $200-wide bins over $0 to $30,000"
            ));
        }
    }
    out.push("failed releases appear as NaN metric rows with the error as reason".into());
    out
}

/// Suite inputs that do not depend on the replication.
struct Prepared {
    truth: Truth,
    column: Option<crate::data::BoundedColumn>,
    hist: Option<HistogramSpec>,
    design: Option<DesignSpec>,
}

impl Prepared {
    fn new(suite: &QuerySuite, table: &Table) -> Result<Self> {
        match suite {
            QuerySuite::Histogram { column, lower, upper, bins, .. } => {
                let col = table.numeric(column)?.clone();
                let spec = HistogramSpec::uniform(*lower, *upper, *bins)?;
                let truth = Truth::Histogram { counts: true_counts(&col, &spec) };
                Ok(Self { truth, column: Some(col), hist: Some(spec), design: None })
            }
            QuerySuite::Quantiles { column, probabilities, .. } => {
                let col = table.numeric(column)?.clone();
                if col.is_empty() {
                    return Err(DpError::InsufficientData("quantile column is empty".into()));
                }
                let mut xs = col.values().to_vec();
                xs.sort_by(f64::total_cmp);
                let values = probabilities
                    .iter()
                    .map(|q| xs[crate::summary::order_rank(*q, xs.len()) - 1])
                    .collect();
                let truth = Truth::Quantiles { probabilities: probabilities.clone(), values };
                Ok(Self { truth, column: Some(col), hist: None, design: None })
            }
            QuerySuite::Means { column, confidence, .. } => {
                let col = table.numeric(column)?.clone();
                let (lo, hi) = confidential_mean_ci(&col, *confidence)?;
                let truth = Truth::Mean { mean: col.mean(), ci: Interval::new(lo, hi) };
                Ok(Self { truth, column: Some(col), hist: None, design: None })
            }
            QuerySuite::Regression { response, numeric, categorical, intercept, confidence, .. } => {
                let num: Vec<&str> = numeric.iter().map(String::as_str).collect();
                let cat: Vec<&str> = categorical.iter().map(String::as_str).collect();
                let design = DesignSpec::from_table(table, response, &num, &cat, *intercept)?;
                let ols = confidential_ols(&design, *confidence)?;
                let truth = Truth::Regression { terms: ols.terms, beta: ols.beta, ci: ols.ci_asymptotic };
                Ok(Self { truth, column: None, hist: None, design: Some(design) })
            }
        }
    }

    fn release(
        &self,
        suite: &QuerySuite,
        method: &str,
        params: PrivacyParams,
        rng: &mut RandomSource,
    ) -> Result<ReleaseOutput> {
        let parse = |s: &str| serde_json::Value::String(s.to_string());
        match suite {
            QuerySuite::Histogram { .. } => {
                let mech: HistogramMechanism = serde_json::from_value(parse(method))?;
                let col = self.column.as_ref().expect("histogram column");
                let spec = self.hist.as_ref().expect("histogram spec");
                let rel = dp_histogram(col, spec, params, mech, rng)?;
                Ok(ReleaseOutput::Histogram { counts: rel.value.counts })
            }
            QuerySuite::Quantiles { probabilities, .. } => {
                let m: QuantileMethod = serde_json::from_value(parse(method))?;
                let col = self.column.as_ref().expect("quantile column");
                let values = match m {
                    QuantileMethod::ExpPureSplit => {
                        dp_quantiles(col, probabilities, QuantileMode::PureSplit, params, rng)?.value
                    }
                    QuantileMethod::ExpZcdp => dp_quantiles(col, probabilities, QuantileMode::ZcdpCompose, params, rng)?.value,
                    QuantileMethod::Smooth => {
                        let each = params.split(probabilities.len())?;
                        probabilities
                            .iter()
                            .map(|q| Ok(dp_quantile_smooth(col, *q, each, rng)?.value))
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                Ok(ReleaseOutput::Quantiles { values })
            }
            QuerySuite::Means { confidence, bhm_draws, .. } => {
                let m: MeanMethod = serde_json::from_value(parse(&method.to_uppercase()))?;
                let col = self.column.as_ref().expect("mean column");
                let cfg = NoisyMeanConfig::default();
                let rel = match m {
                    MeanMethod::NoisyVar => dp_mean_noisyvar(col, params.epsilon(), *confidence, &cfg, rng)?,
                    MeanMethod::NoisyMad => dp_mean_noisymad(col, params.epsilon(), *confidence, &cfg, rng)?,
                    MeanMethod::Bhm => dp_mean_bhm(col, params, *bhm_draws, *confidence, rng)?,
                };
                let v = rel.value;
                Ok(ReleaseOutput::Mean { point: v.point, ci: Interval::new(v.ci_lower, v.ci_upper) })
            }
            QuerySuite::Regression { confidence, bootstrap_replicates, calibration, bhm_draws, .. } => {
                let m: RegressionMethod = serde_json::from_value(parse(method))?;
                let design = self.design.as_ref().expect("regression design");
                let options = RegressionOptions {
                    confidence: *confidence,
                    bootstrap_replicates: *bootstrap_replicates,
                    calibration: *calibration,
                    ..RegressionOptions::default()
                };
                match m.mechanism() {
                    Some(mech) => {
                        let e = dp_regression(design, mech, params, &options, rng)?.value.estimate;
                        Ok(ReleaseOutput::Regression {
                            beta: e.beta,
                            ci_asymptotic: e.ci_asymptotic,
                            ci_bootstrap: e.ci_bootstrap,
                        })
                    }
                    None => {
                        let e = bhm_regression(design, params, *bhm_draws, *confidence, &options.regularize, false, rng)?
                            .value;
                        Ok(ReleaseOutput::Regression { beta: e.beta, ci_asymptotic: e.ci, ci_bootstrap: None })
                    }
                }
            }
        }
    }
}

fn metric_names(truth: &Truth) -> Vec<String> {
    match truth {
        Truth::Histogram { .. } => vec!["max_cumulative_error".into(), "mean_cumulative_error".into()],
        Truth::Quantiles { probabilities, .. } => probabilities
            .iter()
            .flat_map(|q| [format!("error[q={q}]"), format!("abs_error[q={q}]")])
            .collect(),
        Truth::Mean { .. } => {
            vec!["relative_error".into(), "ci_ratio".into(), "ci_overlap".into(), "covers_mean".into()]
        }
        Truth::Regression { terms, .. } => terms
            .iter()
            .flat_map(|t| {
                [
                    "error",
                    "cir_asymptotic",
                    "cio_asymptotic",
                    "cir_bootstrap",
                    "cio_bootstrap",
                    "covers_confidential_bootstrap",
                    "sign_match",
                    "significance_match",
                ]
                .map(|m| format!("{m}[{t}]"))
            })
            .collect(),
    }
}

fn bool_value(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Metric values for one release, keyed by name; errors become NaN reasons.
fn release_metrics(truth: &Truth, output: &ReleaseOutput) -> BTreeMap<String, std::result::Result<f64, String>> {
    let mut out = BTreeMap::new();
    let mut put = |name: String, v: Result<f64>| {
        out.insert(name, v.map_err(|e| e.to_string()));
    };
    match (truth, output) {
        (Truth::Histogram { counts }, ReleaseOutput::Histogram { counts: noisy }) => {
            let e = cumulative_error_metrics(counts, noisy);
            put("max_cumulative_error".into(), e.clone().map(|e| e.max_relative));
            put("mean_cumulative_error".into(), e.map(|e| e.mean_relative));
        }
        (Truth::Quantiles { probabilities, values }, ReleaseOutput::Quantiles { values: noisy }) => {
            for ((q, t), v) in probabilities.iter().zip(values).zip(noisy) {
                put(format!("error[q={q}]"), Ok(v - t));
                put(format!("abs_error[q={q}]"), Ok((v - t).abs()));
            }
        }
        (Truth::Mean { mean, ci }, ReleaseOutput::Mean { point, ci: noisy }) => {
            let rel = if *mean == 0.0 {
                Err(DpError::UndefinedMetric("relative error at a zero mean".into()))
            } else {
                Ok((point - mean).abs() / mean.abs())
            };
            put("relative_error".into(), rel);
            put("ci_ratio".into(), ci_ratio(ci, noisy));
            put("ci_overlap".into(), ci_overlap(ci, noisy));
            put("covers_mean".into(), Ok(bool_value(noisy.contains(*mean))));
        }
        (Truth::Regression { terms, beta, ci }, ReleaseOutput::Regression { beta: b, ci_asymptotic, ci_bootstrap }) => {
            for (j, t) in terms.iter().enumerate() {
                put(format!("error[{t}]"), Ok(b[j] - beta[j]));
                put(format!("cir_asymptotic[{t}]"), ci_ratio(&ci[j], &ci_asymptotic[j]));
                put(format!("cio_asymptotic[{t}]"), ci_overlap(&ci[j], &ci_asymptotic[j]));
                let missing = || Err(DpError::UndefinedMetric("no bootstrap interval".into()));
                match ci_bootstrap {
                    Some(boot) => {
                        put(format!("cir_bootstrap[{t}]"), ci_ratio(&ci[j], &boot[j]));
                        put(format!("cio_bootstrap[{t}]"), ci_overlap(&ci[j], &boot[j]));
                        put(format!("covers_confidential_bootstrap[{t}]"), Ok(bool_value(boot[j].contains(beta[j]))));
                    }
                    None => {
                        put(format!("cir_bootstrap[{t}]"), missing());
                        put(format!("cio_bootstrap[{t}]"), missing());
                        put(format!("covers_confidential_bootstrap[{t}]"), missing());
                    }
                }
                let m = sign_significance_match(beta[j], &ci[j], b[j], &ci_asymptotic[j]);
                put(format!("sign_match[{t}]"), Ok(bool_value(m.sign)));
                put(format!("significance_match[{t}]"), Ok(bool_value(m.significance)));
            }
        }
        _ => {}
    }
    out
}

fn record_order(a: &MetricsRecord, b: &MetricsRecord) -> std::cmp::Ordering {
    a.method
        .cmp(&b.method)
        .then(a.epsilon.total_cmp(&b.epsilon))
        .then(a.delta.total_cmp(&b.delta))
        .then(a.rep.cmp(&b.rep))
        .then(a.metric.cmp(&b.metric))
}

/// One record per (release, metric), sorted. Every release yields the full
/// metric list for the suite; failures give NaN with a reason.
pub fn compute_metrics(raw: &RawOutputs) -> Vec<MetricsRecord> {
    let names = metric_names(&raw.truth);
    let mut records: Vec<MetricsRecord> = raw
        .releases
        .par_iter()
        .flat_map_iter(|r| {
            let values = match &r.output {
                Some(o) => release_metrics(&raw.truth, o),
                None => BTreeMap::new(),
            };
            let fallback = r.error.clone().unwrap_or_else(|| "release output does not match the suite".into());
            names
                .iter()
                .map(|name| {
                    let (value, reason) = match values.get(name) {
                        Some(Ok(v)) if v.is_finite() => (*v, None),
                        Some(Ok(_)) => (f64::NAN, Some("non-finite value".to_string())),
                        Some(Err(e)) => (f64::NAN, Some(e.clone())),
                        None => (f64::NAN, Some(fallback.clone())),
                    };
                    MetricsRecord {
                        method: r.method.clone(),
                        epsilon: r.epsilon,
                        delta: r.delta,
                        rep: r.rep,
                        metric: name.clone(),
                        value,
                        reason,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    records.sort_by(record_order);
    records
}

type CellKey = (String, u64, u64);

fn cell_key(method: &str, epsilon: f64, delta: f64) -> CellKey {
    (method.to_string(), epsilon.to_bits(), delta.to_bits())
}

fn point_estimates(truth: &Truth, output: &ReleaseOutput) -> Vec<(String, f64, f64)> {
    match (truth, output) {
        (Truth::Histogram { counts }, ReleaseOutput::Histogram { counts: noisy }) => counts
            .iter()
            .zip(noisy)
            .enumerate()
            .map(|(i, (t, v))| (format!("bin[{i:03}]"), *t, *v))
            .collect(),
        (Truth::Quantiles { probabilities, values }, ReleaseOutput::Quantiles { values: noisy }) => probabilities
            .iter()
            .zip(values)
            .zip(noisy)
            .map(|((q, t), v)| (format!("q={q}"), *t, *v))
            .collect(),
        (Truth::Mean { mean, .. }, ReleaseOutput::Mean { point, .. }) => vec![("mean".into(), *mean, *point)],
        (Truth::Regression { terms, beta, .. }, ReleaseOutput::Regression { beta: b, .. }) => {
            terms.iter().zip(beta).zip(b).map(|((t, x), v)| (t.clone(), *x, *v)).collect()
        }
        _ => Vec::new(),
    }
}

pub fn summarize(raw: &RawOutputs, records: &[MetricsRecord]) -> ExperimentSummary {
    let mut cells: BTreeMap<(CellKey, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        cells.entry((cell_key(&r.method, r.epsilon, r.delta), r.metric.clone())).or_default().push(r.value);
    }
    let rows = cells
        .into_iter()
        .map(|(((method, e, d), metric), values)| {
            let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let mean =
                if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
            SummaryRow {
                method,
                epsilon: f64::from_bits(e),
                delta: f64::from_bits(d),
                metric,
                count: finite.len(),
                nan_count: values.len() - finite.len(),
                mean,
                median: median(&finite),
            }
        })
        .collect();

    let mut estimates: BTreeMap<(CellKey, String), (f64, Vec<f64>)> = BTreeMap::new();
    for r in &raw.releases {
        if let Some(o) = &r.output {
            for (name, truth, v) in point_estimates(&raw.truth, o) {
                estimates.entry((cell_key(&r.method, r.epsilon, r.delta), name)).or_insert((truth, Vec::new())).1.push(v);
            }
        }
    }
    let accuracy = estimates
        .into_iter()
        .filter_map(|(((method, e, d), estimand), (truth, sample))| {
            let s = rmse_bias(truth, &sample).ok()?;
            Some(AccuracyRow {
                method,
                epsilon: f64::from_bits(e),
                delta: f64::from_bits(d),
                estimand,
                truth,
                rmse: s.rmse,
                bias: s.bias,
                bias_metric: s.relative_bias.metric_name().to_string(),
                bias_value: s.relative_bias.value(),
            })
        })
        .collect();
    ExperimentSummary { rows, accuracy }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| DpError::Io(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RAW_FILE: &str = "raw.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes metrics.csv, summary.json, raw.json and manifest.json into `dir`.
pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&run.records)?)?;
    write_json(&dir.join(SUMMARY_FILE), &run.summary)?;
    write_json(&dir.join(RAW_FILE), &run.raw)?;
    write_json(&dir.join(MANIFEST_FILE), &run.manifest)?;
    Ok(())
}

/// Recomputes metrics.csv and summary.json from a stored raw.json.
pub fn recompute_metrics(raw_path: &Path, dir: &Path) -> Result<(Vec<MetricsRecord>, ExperimentSummary)> {
    let raw: RawOutputs = serde_json::from_str(&fs::read_to_string(raw_path)?)?;
    let records = compute_metrics(&raw);
    let summary = summarize(&raw, &records);
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&records)?)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(suite: QuerySuite, epsilons: Vec<f64>, reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic { n: 3000, seed: 5 },
            suite,
            epsilons,
            deltas: vec![1e-6],
            replications: reps,
            seed: 11,
        }
    }

    fn histogram() -> QuerySuite {
        QuerySuite::Histogram {
            column: "earned_income".into(),
            lower: 0.0,
            upper: 30_000.0,
            bins: DEFAULT_HISTOGRAM_BINS,
            methods: default_histogram_methods(),
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"source": "synthetic", "n": 100, "seed": 1},
                "suite": {"kind": "histogram", "column": "earned_income", "lower": 0, "upper": 30000},
                "epsilons": [1], "deltas": [1e-6], "replications": 2, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.suite, histogram());
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.replications = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.epsilons.clear();
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.deltas = vec![1.0];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn large_epsilon_histogram_is_near_exact() {
        let run = run_experiment(&config(histogram(), vec![1e7], 1)).unwrap();
        for r in &run.records {
            assert!(r.value < 1e-4, "{r:?}");
        }
        assert!(run.manifest.notes[0].contains("150"));
    }

    #[test]
    fn records_partition_the_grid() {
        let suite = QuerySuite::Means {
            column: "income".into(),
            methods: vec![MeanMethod::NoisyVar, MeanMethod::NoisyMad, MeanMethod::Bhm],
            confidence: 0.95,
            bhm_draws: 1,
        };
        let mut cfg = config(suite, vec![0.5, 2.0], 3);
        cfg.deltas = vec![0.0, 1e-3];
        let run = run_experiment(&cfg).unwrap();
        // 3 methods x 2 eps x 2 deltas x 3 reps x 4 metrics
        assert_eq!(run.records.len(), 3 * 2 * 2 * 3 * 4);
        // BHM at delta = 0 fails and is reported, not dropped.
        let bhm_zero: Vec<_> = run.records.iter().filter(|r| r.method == "bhm" && r.delta == 0.0).collect();
        assert_eq!(bhm_zero.len(), 2 * 3 * 4);
        assert!(bhm_zero.iter().all(|r| r.value.is_nan() && r.reason.is_some()));
        assert_eq!(run.manifest.failed_releases, 2 * 3);
    }

    #[test]
    fn byte_stable_outputs() {
        let suite = QuerySuite::Quantiles {
            column: "income".into(),
            probabilities: vec![0.25, 0.5, 0.9],
            methods: vec![QuantileMethod::ExpPureSplit, QuantileMethod::ExpZcdp, QuantileMethod::Smooth],
        };
        let cfg = config(suite, vec![1.0, 5.0], 4);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_outputs(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
        write_outputs(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
        for f in [METRICS_FILE, SUMMARY_FILE, RAW_FILE, MANIFEST_FILE] {
            assert!(fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap(), "{f} differs");
        }
        let c = tempfile::tempdir().unwrap();
        recompute_metrics(&a.path().join(RAW_FILE), c.path()).unwrap();
        for f in [METRICS_FILE, SUMMARY_FILE] {
            assert!(fs::read(a.path().join(f)).unwrap() == fs::read(c.path().join(f)).unwrap(), "{f} differs");
        }
    }

    #[test]
    fn regression_suite_runs_with_failures_reported() {
        let suite = QuerySuite::Regression {
            response: "cg_ratio".into(),
            numeric: vec!["marginal_rate".into(), "log_dividends".into(), "log_agi".into()],
            categorical: vec!["age65".into()],
            intercept: true,
            methods: vec![RegressionMethod::AnalyticGaussian, RegressionMethod::Wishart, RegressionMethod::Bhm],
            confidence: 0.95,
            bootstrap_replicates: 100,
            calibration: BootstrapCalibration::AsWritten,
            bhm_draws: 10,
        };
        let run = run_experiment(&config(suite, vec![5.0], 2)).unwrap();
        let per_release = 5 * 8;
        assert_eq!(run.records.len(), 3 * 2 * per_release);
        // Wishart needs epsilon < 1.
        assert!(run.records.iter().filter(|r| r.method == "wishart").all(|r| r.value.is_nan()));
        assert!(run
            .records
            .iter()
            .filter(|r| r.method == "bhm" && r.metric.starts_with("cir_bootstrap"))
            .all(|r| r.reason.as_deref() == Some("undefined metric: no bootstrap interval")));
        assert!(run
            .records
            .iter()
            .filter(|r| r.method == "analytic-gaussian")
            .all(|r| r.value.is_finite()));
    }
}
