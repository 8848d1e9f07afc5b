use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use dpvs::eval::{QuantileMethod, RegressionMethod};
use dpvs::regression::{
    bhm_regression, dp_regression, BhmEstimate, DesignSpec, RegressionEstimate, RegressionMechanism,
    RegressionOptions,
};
use dpvs::summary::{
    dp_histogram, dp_mean_bhm, dp_mean_noisymad, dp_mean_noisyvar, dp_quantile_smooth, dp_quantiles,
    HistogramMechanism, HistogramSpec, MeanCi, MeanMethod, NoisyMeanConfig, QuantileMode,
};
use dpvs::{Accountant, Budget, ChargeOutcome, ChargePreview, ChargeRecord, Predicate, PrivacyParams, RandomSource, Schema, Table};
use serde::{Deserialize, Serialize};

use crate::config::ServerConfig;
use crate::error::{ServerError, ServerResult};

/// Body of POST /datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistration {
    pub id: String,
    pub csv_path: PathBuf,
    /// Bounds for every numeric column and levels for every categorical one.
    pub schema: Schema,
    pub total_budget: PrivacyParams,
    #[serde(default)]
    pub min_subset_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReceipt {
    pub id: String,
    pub rows: usize,
    pub clamped_values: usize,
    pub min_subset_size: usize,
}

fn default_confidence() -> f64 {
    0.95
}

fn default_true() -> bool {
    true
}

fn default_bins() -> usize {
    10
}

fn default_one() -> usize {
    1
}

fn default_bootstrap() -> usize {
    1000
}

fn default_bhm_draws() -> usize {
    25
}

fn default_histogram_mechanism() -> HistogramMechanism {
    HistogramMechanism::Laplace
}

fn default_mean_method() -> MeanMethod {
    MeanMethod::NoisyVar
}

fn default_quantile_method() -> QuantileMethod {
    QuantileMethod::ExpPureSplit
}

fn default_regression_method() -> RegressionMethod {
    RegressionMethod::AnalyticGaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Histogram {
        column: String,
        /// Equal-width bins over the column bounds, unless `edges` is set.
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default)]
        edges: Option<Vec<f64>>,
        #[serde(default = "default_histogram_mechanism")]
        mechanism: HistogramMechanism,
    },
    Mean {
        column: String,
        #[serde(default = "default_mean_method")]
        method: MeanMethod,
        #[serde(default = "default_confidence")]
        confidence: f64,
        #[serde(default = "default_one")]
        bhm_draws: usize,
    },
    Quantile {
        column: String,
        probabilities: Vec<f64>,
        #[serde(default = "default_quantile_method")]
        method: QuantileMethod,
    },
    Regression {
        response: String,
        #[serde(default)]
        numeric: Vec<String>,
        #[serde(default)]
        categorical: Vec<String>,
        #[serde(default = "default_true")]
        intercept: bool,
        #[serde(default = "default_regression_method")]
        mechanism: RegressionMethod,
        #[serde(default = "default_confidence")]
        confidence: f64,
        #[serde(default = "default_bootstrap")]
        bootstrap_replicates: usize,
        #[serde(default = "default_bhm_draws")]
        bhm_draws: usize,
    },
}

impl Query {
    fn label(&self) -> String {
        match self {
            Query::Histogram { column, .. } => format!("histogram:{column}"),
            Query::Mean { column, .. } => format!("mean:{column}"),
            Query::Quantile { column, .. } => format!("quantile:{column}"),
            Query::Regression { response, .. } => format!("regression:{response}"),
        }
    }

    /// Mechanisms that are only defined with delta > 0.
    fn needs_delta(&self) -> bool {
        match self {
            Query::Histogram { mechanism, .. } => *mechanism == HistogramMechanism::Gaussian,
            Query::Mean { method, .. } => *method == MeanMethod::Bhm,
            Query::Quantile { method, .. } => *method != QuantileMethod::ExpPureSplit,
            Query::Regression { mechanism, .. } => *mechanism != RegressionMethod::Laplace,
        }
    }
}

/// Body of POST /datasets/{id}/queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(flatten)]
    pub query: Query,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    /// Conjunction of `column == level` conditions on categorical columns.
    #[serde(default)]
    pub filter: Vec<Predicate>,
}

/// Body of POST /datasets/{id}/preview. Extra fields (a full draft query)
/// are accepted and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResult {
    Histogram { edges: Vec<f64>, counts: Vec<f64> },
    Mean(MeanCi),
    Quantile { probabilities: Vec<f64>, values: Vec<f64> },
    Regression(RegressionEstimate),
    BhmRegression(BhmEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub dataset_id: String,
    pub result: QueryResult,
    pub charge: Budget,
    pub remaining: Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub total: Budget,
    pub spent: Budget,
    pub remaining: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResponse {
    pub dataset_id: String,
    #[serde(flatten)]
    pub status: BudgetStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub dataset_id: String,
    #[serde(flatten)]
    pub preview: ChargePreview,
}

struct Dataset {
    table: Table,
    min_subset_size: usize,
}

/// Everything checked before the ledger is touched.
enum Plan {
    Histogram { column: dpvs::BoundedColumn, spec: HistogramSpec, mechanism: HistogramMechanism },
    Mean { column: dpvs::BoundedColumn, method: MeanMethod, confidence: f64, draws: usize },
    Quantile { column: dpvs::BoundedColumn, probabilities: Vec<f64>, method: QuantileMethod },
    Regression { design: DesignSpec, method: RegressionMethod, options: RegressionOptions, draws: usize },
}

/// Dataset registry, budget ledgers and query execution.
///
/// A query is validated, its subset resolved and checked against the
/// minimum size, then charged, then computed. A failure after the charge
/// keeps the charge. The size check happens before any charge, so an
/// "insufficient data" answer is free; this reveals whether a subset is
/// small or empty.
pub struct ValidationService {
    storage: Option<PathBuf>,
    accountant: Accountant,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    default_min_subset_size: usize,
    seed: Option<u64>,
    counter: AtomicU64,
}

fn registrations_dir(storage: &Path) -> PathBuf {
    storage.join("registrations")
}

fn ledgers_dir(storage: &Path) -> PathBuf {
    storage.join("ledgers")
}

fn internal(e: impl std::fmt::Display) -> ServerError {
    ServerError::Internal(e.to_string())
}

impl ValidationService {
    /// Opens the service, reloading persisted registrations and ledgers.
    pub fn open(config: &ServerConfig) -> ServerResult<Self> {
        let accountant = match &config.storage_dir {
            Some(dir) => Accountant::open(ledgers_dir(dir)).map_err(internal)?,
            None => Accountant::in_memory(),
        };
        let service = Self {
            storage: config.storage_dir.clone(),
            accountant,
            datasets: RwLock::new(HashMap::new()),
            default_min_subset_size: config.default_min_subset_size.max(1),
            seed: config.seed,
            counter: AtomicU64::new(0),
        };
        if let Some(dir) = &config.storage_dir {
            let regs = registrations_dir(dir);
            fs::create_dir_all(&regs).map_err(internal)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(&regs)
                .map_err(internal)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
                .collect();
            paths.sort();
            for path in paths {
                let text = fs::read_to_string(&path).map_err(internal)?;
                let reg: DatasetRegistration = serde_json::from_str(&text).map_err(internal)?;
                let dataset = service.ingest(&reg)?;
                if !service.accountant.contains(&reg.id) {
                    service.accountant.create_ledger(&reg.id, reg.total_budget).map_err(internal)?;
                }
                service.datasets.write().expect("dataset map poisoned").insert(reg.id.clone(), Arc::new(dataset));
            }
        }
        Ok(service)
    }

    pub fn in_memory() -> Self {
        Self::open(&ServerConfig::default()).expect("in-memory service cannot fail to open")
    }

    fn ingest(&self, reg: &DatasetRegistration) -> ServerResult<Dataset> {
        let min = reg.min_subset_size.unwrap_or(self.default_min_subset_size);
        if min == 0 {
            return Err(ServerError::Malformed("min_subset_size must be positive".into()));
        }
        let table = Table::from_csv(&reg.csv_path, &reg.schema).map_err(|e| ServerError::Malformed(e.to_string()))?;
        Ok(Dataset { table, min_subset_size: min })
    }

    pub fn register_dataset(&self, reg: DatasetRegistration) -> ServerResult<RegistrationReceipt> {
        if self.datasets.read().expect("dataset map poisoned").contains_key(&reg.id) || self.accountant.contains(&reg.id) {
            return Err(ServerError::Conflict(format!("dataset {:?} is already registered", reg.id)));
        }
        let dataset = self.ingest(&reg)?;
        let mut map = self.datasets.write().expect("dataset map poisoned");
        if map.contains_key(&reg.id) {
            return Err(ServerError::Conflict(format!("dataset {:?} is already registered", reg.id)));
        }
        self.accountant.create_ledger(&reg.id, reg.total_budget).map_err(|e| match e {
            dpvs::DpError::InvalidInput(m) => ServerError::Conflict(m),
            other => ServerError::from(other),
        })?;
        if let Some(dir) = &self.storage {
            let path = registrations_dir(dir).join(format!("{}.json", reg.id));
            let text = serde_json::to_string_pretty(&reg).map_err(internal)?;
            fs::write(path, text).map_err(internal)?;
        }
        let receipt = RegistrationReceipt {
            id: reg.id.clone(),
            rows: dataset.table.rows(),
            clamped_values: clamped(&dataset.table),
            min_subset_size: dataset.min_subset_size,
        };
        map.insert(reg.id, Arc::new(dataset));
        Ok(receipt)
    }

    fn dataset(&self, id: &str) -> ServerResult<Arc<Dataset>> {
        self.datasets
            .read()
            .expect("dataset map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::NotFound(format!("no dataset {id:?}")))
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.datasets.read().expect("dataset map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn get_budget(&self, id: &str) -> ServerResult<BudgetResponse> {
        self.dataset(id)?;
        let ledger = self.accountant.snapshot(id)?;
        let status = BudgetStatus { total: ledger.total.as_budget(), spent: ledger.spent(), remaining: ledger.remaining() };
        Ok(BudgetResponse { dataset_id: id.to_string(), status })
    }

    /// Pure what-if of charging (epsilon, delta).
    pub fn preview(&self, id: &str, req: PreviewRequest) -> ServerResult<PreviewResponse> {
        self.dataset(id)?;
        let params = PrivacyParams::new(req.epsilon, req.delta)?;
        let preview = self.accountant.preview_charge(id, &ChargeRecord::sequential("preview", params))?;
        Ok(PreviewResponse { dataset_id: id.to_string(), preview })
    }

    fn next_rng(&self) -> RandomSource {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        match self.seed {
            Some(seed) => RandomSource::new(seed, n),
            None => RandomSource::new(rand::random(), n),
        }
    }

    pub fn handle_query(&self, id: &str, req: QueryRequest) -> ServerResult<QueryResponse> {
        let dataset = self.dataset(id)?;
        let params = PrivacyParams::new(req.epsilon, req.delta)?;
        if req.query.needs_delta() && params.is_pure() {
            return Err(ServerError::Malformed("this method needs delta > 0".into()));
        }
        let rows = if req.filter.is_empty() {
            (0..dataset.table.rows()).collect()
        } else {
            dataset.table.matching_rows(&req.filter)?
        };
        if rows.len() < dataset.min_subset_size {
            return Err(ServerError::InsufficientData(format!(
                "the subset has fewer than {} records",
                dataset.min_subset_size
            )));
        }
        let subset = dataset.table.select_rows(&rows);
        let plan = plan(&req.query, &subset, params)?;

        let charge = ChargeRecord::sequential(req.query.label(), params);
        let remaining = match self.accountant.try_charge(id, charge)? {
            ChargeOutcome::Accepted { remaining } => remaining,
            ChargeOutcome::Rejected { remaining } => return Err(ServerError::BudgetExceeded { remaining }),
        };
        let mut rng = self.next_rng();
        let result = execute(plan, params, &mut rng)
            .map_err(|e| ServerError::QueryFailed { message: e.to_string(), remaining })?;
        Ok(QueryResponse { dataset_id: id.to_string(), result, charge: params.as_budget(), remaining })
    }

    pub fn accountant(&self) -> &Accountant {
        &self.accountant
    }
}

fn clamped(table: &Table) -> usize {
    table
        .names()
        .iter()
        .filter_map(|n| table.numeric(n).ok())
        .map(|c| c.clamp_count())
        .sum()
}

fn plan(query: &Query, table: &Table, params: PrivacyParams) -> ServerResult<Plan> {
    let check_confidence = |c: f64| {
        if c > 0.0 && c < 1.0 {
            Ok(())
        } else {
            Err(ServerError::Malformed(format!("confidence must lie in (0, 1), got {c}")))
        }
    };
    Ok(match query {
        Query::Histogram { column, bins, edges, mechanism } => {
            let column = table.numeric(column)?.clone();
            let spec = match edges {
                Some(e) => HistogramSpec::new(e.clone())?,
                None => HistogramSpec::uniform(column.lower(), column.upper(), *bins)?,
            };
            Plan::Histogram { column, spec, mechanism: *mechanism }
        }
        Query::Mean { column, method, confidence, bhm_draws } => {
            check_confidence(*confidence)?;
            if *bhm_draws == 0 {
                return Err(ServerError::Malformed("bhm_draws must be positive".into()));
            }
            Plan::Mean { column: table.numeric(column)?.clone(), method: *method, confidence: *confidence, draws: *bhm_draws }
        }
        Query::Quantile { column, probabilities, method } => {
            if probabilities.is_empty()
                || probabilities.iter().any(|q| !(*q > 0.0 && *q < 1.0))
                || probabilities.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(ServerError::Malformed("probabilities must be sorted, distinct and inside (0, 1)".into()));
            }
            Plan::Quantile { column: table.numeric(column)?.clone(), probabilities: probabilities.clone(), method: *method }
        }
        Query::Regression {
            response,
            numeric,
            categorical,
            intercept,
            mechanism,
            confidence,
            bootstrap_replicates,
            bhm_draws,
        } => {
            check_confidence(*confidence)?;
            if *mechanism == RegressionMethod::Wishart && params.epsilon() >= 1.0 {
                return Err(ServerError::Malformed("the Wishart mechanism needs epsilon < 1".into()));
            }
            if *mechanism == RegressionMethod::Bhm && (*bhm_draws < 2 || !intercept) {
                return Err(ServerError::Malformed("BHM regression needs an intercept and at least two draws".into()));
            }
            if *bootstrap_replicates != 0 && *bootstrap_replicates < 100 {
                return Err(ServerError::Malformed("bootstrap_replicates must be 0 or at least 100".into()));
            }
            let num: Vec<&str> = numeric.iter().map(String::as_str).collect();
            let cat: Vec<&str> = categorical.iter().map(String::as_str).collect();
            let design = DesignSpec::from_table(table, response, &num, &cat, *intercept)?;
            let options = RegressionOptions {
                confidence: *confidence,
                bootstrap_replicates: *bootstrap_replicates,
                ..RegressionOptions::default()
            };
            Plan::Regression { design, method: *mechanism, options, draws: *bhm_draws }
        }
    })
}

/// Runs the sanitizing operation. Only values returned by the privacy
/// library's release functions reach the result.
fn execute(plan: Plan, params: PrivacyParams, rng: &mut RandomSource) -> dpvs::Result<QueryResult> {
    Ok(match plan {
        Plan::Histogram { column, spec, mechanism } => {
            let rel = dp_histogram(&column, &spec, params, mechanism, rng)?;
            QueryResult::Histogram { edges: spec.edges().to_vec(), counts: rel.value.counts }
        }
        Plan::Mean { column, method, confidence, draws } => {
            let cfg = NoisyMeanConfig::default();
            let rel = match method {
                MeanMethod::NoisyVar => dp_mean_noisyvar(&column, params.epsilon(), confidence, &cfg, rng)?,
                MeanMethod::NoisyMad => dp_mean_noisymad(&column, params.epsilon(), confidence, &cfg, rng)?,
                MeanMethod::Bhm => dp_mean_bhm(&column, params, draws, confidence, rng)?,
            };
            QueryResult::Mean(rel.value)
        }
        Plan::Quantile { column, probabilities, method } => {
            let values = match method {
                QuantileMethod::ExpPureSplit => {
                    dp_quantiles(&column, &probabilities, QuantileMode::PureSplit, params, rng)?.value
                }
                QuantileMethod::ExpZcdp => dp_quantiles(&column, &probabilities, QuantileMode::ZcdpCompose, params, rng)?.value,
                QuantileMethod::Smooth => {
                    let each = params.split(probabilities.len())?;
                    let mut out = Vec::with_capacity(probabilities.len());
                    for q in &probabilities {
                        out.push(dp_quantile_smooth(&column, *q, each, rng)?.value);
                    }
                    out
                }
            };
            QueryResult::Quantile { probabilities, values }
        }
        Plan::Regression { design, method, options, draws } => {
            let mech = match method {
                RegressionMethod::Laplace => RegressionMechanism::Laplace,
                RegressionMethod::AnalyticGaussian => RegressionMechanism::AnalyticGaussian,
                RegressionMethod::Wishart => RegressionMechanism::Wishart,
                RegressionMethod::RegNormal => RegressionMechanism::RegNormal,
                RegressionMethod::RegSphericalLaplace => RegressionMechanism::RegSphericalLaplace,
                RegressionMethod::Bhm => {
                    let rel = bhm_regression(&design, params, draws, options.confidence, &options.regularize, false, rng)?;
                    return Ok(QueryResult::BhmRegression(rel.value));
                }
            };
            QueryResult::Regression(dp_regression(&design, mech, params, &options, rng)?.value.estimate)
        }
    })
}
