//! Per-dataset privacy-budget ledger.
//!
//! Sequential charges add up in both epsilon and delta. Charges sharing a
//! parallel group act on disjoint parts of the data and contribute only the
//! group maximum (per coordinate). Disjointness is declared by the caller and
//! never inferred. Ledgers persist as append-only newline-delimited JSON:
//! one `open` line followed by one line per accepted charge.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::privacy::{Budget, PrivacyParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Composition {
    Sequential,
    Parallel { group: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeRecord {
    pub query_id: String,
    pub params: PrivacyParams,
    pub composition: Composition,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl ChargeRecord {
    pub fn sequential(query_id: impl Into<String>, params: PrivacyParams) -> Self {
        Self { query_id: query_id.into(), params, composition: Composition::Sequential, timestamp_ms: now_ms() }
    }

    pub fn parallel(query_id: impl Into<String>, params: PrivacyParams, group: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            params,
            composition: Composition::Parallel { group: group.into() },
            timestamp_ms: now_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ChargeOutcome {
    Accepted { remaining: Budget },
    Rejected { remaining: Budget },
}

impl ChargeOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ChargeOutcome::Accepted { .. })
    }

    pub fn remaining(&self) -> Budget {
        match self {
            ChargeOutcome::Accepted { remaining } | ChargeOutcome::Rejected { remaining } => *remaining,
        }
    }
}

/// What-if result of a proposed charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargePreview {
    pub spent_after: Budget,
    /// Remaining budget after the charge, floored at zero.
    pub remaining_after: Budget,
    pub would_accept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub dataset_id: String,
    pub total: PrivacyParams,
    charges: Vec<ChargeRecord>,
}

fn spent_of<'a>(charges: impl Iterator<Item = &'a ChargeRecord>) -> Budget {
    let mut sequential = Budget::ZERO;
    let mut groups: BTreeMap<&str, Budget> = BTreeMap::new();
    for c in charges {
        let b = c.params.as_budget();
        match &c.composition {
            Composition::Sequential => sequential = sequential.plus(&b),
            Composition::Parallel { group } => {
                let slot = groups.entry(group.as_str()).or_insert(Budget::ZERO);
                *slot = slot.max(&b);
            }
        }
    }
    groups.values().fold(sequential, |acc, g| acc.plus(g))
}

impl BudgetLedger {
    pub fn new(dataset_id: impl Into<String>, total: PrivacyParams) -> Self {
        Self { dataset_id: dataset_id.into(), total, charges: Vec::new() }
    }

    pub fn charges(&self) -> &[ChargeRecord] {
        &self.charges
    }

    pub fn spent(&self) -> Budget {
        spent_of(self.charges.iter())
    }

    pub fn remaining(&self) -> Budget {
        self.total.as_budget().saturating_minus(&self.spent())
    }

    pub fn preview_charge(&self, proposed: &ChargeRecord) -> ChargePreview {
        let spent_after = spent_of(self.charges.iter().chain(std::iter::once(proposed)));
        let total = self.total.as_budget();
        ChargePreview {
            spent_after,
            remaining_after: total.saturating_minus(&spent_after),
            would_accept: spent_after.fits_within(&total),
        }
    }

    /// Appends the charge if the budget admits it; otherwise leaves the
    /// ledger untouched and reports the current remaining budget.
    pub fn try_charge(&mut self, proposed: ChargeRecord) -> ChargeOutcome {
        let preview = self.preview_charge(&proposed);
        if preview.would_accept {
            self.charges.push(proposed);
            ChargeOutcome::Accepted { remaining: preview.remaining_after }
        } else {
            ChargeOutcome::Rejected { remaining: self.remaining() }
        }
    }

    /// Rebuilds a ledger from its newline-delimited JSON file.
    pub fn replay(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut ledger: Option<BudgetLedger> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerEntry = serde_json::from_str(&line)
                .map_err(|e| DpError::Io(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            match (entry, ledger.as_mut()) {
                (LedgerEntry::Open { dataset_id, total }, None) => ledger = Some(BudgetLedger::new(dataset_id, total)),
                (LedgerEntry::Charge(record), Some(l)) => l.charges.push(record),
                _ => return Err(DpError::Io(format!("{}:{}: malformed ledger sequence", path.display(), lineno + 1))),
            }
        }
        ledger.ok_or_else(|| DpError::Io(format!("{}: empty ledger file", path.display())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LedgerEntry {
    Open { dataset_id: String, total: PrivacyParams },
    Charge(ChargeRecord),
}

struct LedgerSlot {
    ledger: BudgetLedger,
    file: Option<File>,
}

impl LedgerSlot {
    fn append(&mut self, entry: &LedgerEntry) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(entry)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }
}

/// Thread-safe collection of ledgers, one per dataset. Charges against one
/// dataset are serialized; the durable append happens before a charge is
/// reported as accepted.
#[derive(Default)]
pub struct Accountant {
    dir: Option<PathBuf>,
    ledgers: RwLock<HashMap<String, Arc<Mutex<LedgerSlot>>>>,
}

pub(crate) fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(DpError::InvalidInput(format!("invalid dataset id {id:?}")))
    }
}

impl Accountant {
    /// In-memory accountant without persistence.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Persistent accountant; existing `*.ndjson` ledgers in `dir` are replayed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut map = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let ledger = BudgetLedger::replay(&path)?;
            let file = OpenOptions::new().append(true).open(&path)?;
            map.insert(ledger.dataset_id.clone(), Arc::new(Mutex::new(LedgerSlot { ledger, file: Some(file) })));
        }
        Ok(Self { dir: Some(dir), ledgers: RwLock::new(map) })
    }

    pub fn ledger_path(&self, dataset_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{dataset_id}.ndjson")))
    }

    pub fn create_ledger(&self, dataset_id: &str, total: PrivacyParams) -> Result<()> {
        validate_id(dataset_id)?;
        let mut map = self.ledgers.write().expect("ledger map poisoned");
        if map.contains_key(dataset_id) {
            return Err(DpError::InvalidInput(format!("ledger for {dataset_id:?} already exists")));
        }
        let file = match self.ledger_path(dataset_id) {
            Some(path) => Some(OpenOptions::new().create_new(true).append(true).open(path)?),
            None => None,
        };
        let mut slot = LedgerSlot { ledger: BudgetLedger::new(dataset_id, total), file };
        slot.append(&LedgerEntry::Open { dataset_id: dataset_id.to_string(), total })?;
        map.insert(dataset_id.to_string(), Arc::new(Mutex::new(slot)));
        Ok(())
    }

    fn slot(&self, dataset_id: &str) -> Result<Arc<Mutex<LedgerSlot>>> {
        self.ledgers
            .read()
            .expect("ledger map poisoned")
            .get(dataset_id)
            .cloned()
            .ok_or_else(|| DpError::NotFound(format!("no ledger for dataset {dataset_id:?}")))
    }

    pub fn contains(&self, dataset_id: &str) -> bool {
        self.ledgers.read().expect("ledger map poisoned").contains_key(dataset_id)
    }

    /// Atomic check-and-append.
    pub fn try_charge(&self, dataset_id: &str, proposed: ChargeRecord) -> Result<ChargeOutcome> {
        let slot = self.slot(dataset_id)?;
        let mut guard = slot.lock().expect("ledger poisoned");
        let preview = guard.ledger.preview_charge(&proposed);
        if !preview.would_accept {
            return Ok(ChargeOutcome::Rejected { remaining: guard.ledger.remaining() });
        }
        guard.append(&LedgerEntry::Charge(proposed.clone()))?;
        guard.ledger.charges.push(proposed);
        Ok(ChargeOutcome::Accepted { remaining: preview.remaining_after })
    }

    pub fn preview_charge(&self, dataset_id: &str, proposed: &ChargeRecord) -> Result<ChargePreview> {
        let slot = self.slot(dataset_id)?;
        let guard = slot.lock().expect("ledger poisoned");
        Ok(guard.ledger.preview_charge(proposed))
    }

    pub fn spent(&self, dataset_id: &str) -> Result<Budget> {
        Ok(self.snapshot(dataset_id)?.spent())
    }

    pub fn snapshot(&self, dataset_id: &str) -> Result<BudgetLedger> {
        let slot = self.slot(dataset_id)?;
        let guard = slot.lock().expect("ledger poisoned");
        Ok(guard.ledger.clone())
    }
}
