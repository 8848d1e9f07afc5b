//! Utility metrics, a synthetic tax-like data generator and the experiment
//! runner that replicates DP releases over privacy-parameter grids.

mod experiment;
mod metrics;
mod synth;

pub use metrics::{
    ci_overlap, ci_ratio, confusion_matrix, median, rmse_bias, sign_significance_match, spearman, ErrorSummary,
    RelativeBias, SignificanceMatch,
};
pub use synth::{synth_taxlike_data, taxlike_schema, CG_RATIO_MODEL, CG_RATIO_NOISE_SD};
pub use experiment::{
    compute_metrics, metrics_csv, recompute_metrics, run_experiment, run_experiment_on, summarize, task_stream,
    write_outputs, AccuracyRow, DatasetSource, ExperimentConfig, ExperimentRun, ExperimentSummary, MetricsRecord,
    QuantileMethod, QuerySuite, RawOutputs, RawRelease, RegressionMethod, ReleaseOutput, RunManifest, SummaryRow,
    Truth, DEFAULT_HISTOGRAM_BINS, MANIFEST_FILE, METRICS_FILE, RAW_FILE, SUMMARY_FILE,
};
