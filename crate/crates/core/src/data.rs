//! Bounded columns, schemas and CSV ingestion.
//!
//! Numeric bounds are analyst-declared metadata. They are never estimated
//! from the data; values outside them are clamped at ingestion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};

/// Numeric column clamped into declared, data-independent bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedColumn {
    values: Vec<f64>,
    lower: f64,
    upper: f64,
    clamp_count: usize,
}

impl BoundedColumn {
    pub fn new(values: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(DpError::Schema(format!("bounds must be finite with lower < upper, got [{lower}, {upper}]")));
        }
        let mut clamp_count = 0;
        let mut values = values;
        for v in values.iter_mut() {
            if v.is_nan() {
                return Err(DpError::InvalidInput("NaN in numeric column".into()));
            }
            let c = v.clamp(lower, upper);
            if c != *v {
                clamp_count += 1;
                *v = c;
            }
        }
        Ok(Self { values, lower, upper, clamp_count })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of values moved onto a bound when the column was built.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Rows at `indices`; the clamp count of the subset is zero since its
    /// values are already in bounds.
    pub fn select(&self, indices: &[usize]) -> BoundedColumn {
        BoundedColumn {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            lower: self.lower,
            upper: self.upper,
            clamp_count: 0,
        }
    }
}

/// Categorical column stored as level codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    levels: Vec<String>,
    reference: usize,
    codes: Vec<usize>,
}

impl CategoricalColumn {
    pub fn new(levels: Vec<String>, reference: &str, codes: Vec<usize>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(DpError::Schema("categorical columns need at least two levels".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !levels.iter().all(|l| seen.insert(l.as_str())) {
            return Err(DpError::Schema("duplicate categorical level".into()));
        }
        let reference = levels
            .iter()
            .position(|l| l == reference)
            .ok_or_else(|| DpError::Schema(format!("reference level {reference:?} is not a declared level")))?;
        if let Some(bad) = codes.iter().find(|&&c| c >= levels.len()) {
            return Err(DpError::InvalidInput(format!("level code {bad} out of range")));
        }
        Ok(Self { levels, reference, codes })
    }

    pub fn from_labels(levels: Vec<String>, reference: &str, labels: &[&str]) -> Result<Self> {
        let index: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = labels
            .iter()
            .map(|l| index.get(l).copied().ok_or_else(|| DpError::InvalidInput(format!("undeclared level {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels.clone(), reference, codes)
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn level_code(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    /// Non-reference levels in declaration order; one dummy column each.
    pub fn dummy_levels(&self) -> Vec<usize> {
        (0..self.levels.len()).filter(|&l| l != self.reference).collect()
    }

    pub fn select(&self, indices: &[usize]) -> CategoricalColumn {
        CategoricalColumn {
            levels: self.levels.clone(),
            reference: self.reference,
            codes: indices.iter().map(|&i| self.codes[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric { lower: f64, upper: f64 },
    Categorical { levels: Vec<String>, reference: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Sidecar schema declaring bounds and levels for each queryable column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return Err(DpError::Schema(format!("duplicate column {:?}", c.name)));
            }
            match &c.kind {
                ColumnKind::Numeric { lower, upper } => {
                    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                        return Err(DpError::Schema(format!("column {:?} has invalid bounds [{lower}, {upper}]", c.name)));
                    }
                }
                ColumnKind::Categorical { levels, reference } => {
                    if levels.len() < 2 || !levels.contains(reference) {
                        return Err(DpError::Schema(format!(
                            "column {:?} needs >= 2 levels including the reference",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(BoundedColumn),
    Categorical(CategoricalColumn),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(c) => c.len(),
            Column::Categorical(c) => c.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(c) => Column::Numeric(c.select(rows)),
            Column::Categorical(c) => Column::Categorical(c.select(rows)),
        }
    }
}

/// Conjunctive row filter: `column == level` on a categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub equals: String,
}

/// An ingested dataset: named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Column>,
    rows: usize,
}

impl Table {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        if columns.iter().any(|(_, c)| c.len() != rows) {
            return Err(DpError::InvalidInput("columns have different lengths".into()));
        }
        let (names, columns): (Vec<_>, Vec<_>) = columns.into_iter().unzip();
        let mut seen = std::collections::HashSet::new();
        if !names.iter().all(|n| seen.insert(n.clone())) {
            return Err(DpError::Schema("duplicate column name".into()));
        }
        Ok(Self { names, columns, rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DpError::InvalidInput(format!("unknown column {name:?}")))
    }

    pub fn numeric(&self, name: &str) -> Result<&BoundedColumn> {
        match self.column(name)? {
            Column::Numeric(c) => Ok(c),
            Column::Categorical(_) => Err(DpError::InvalidInput(format!("column {name:?} is categorical"))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&CategoricalColumn> {
        match self.column(name)? {
            Column::Categorical(c) => Ok(c),
            Column::Numeric(_) => Err(DpError::InvalidInput(format!("column {name:?} is numeric"))),
        }
    }

    /// Indices of rows matching every predicate.
    pub fn matching_rows(&self, predicates: &[Predicate]) -> Result<Vec<usize>> {
        let mut conds = Vec::with_capacity(predicates.len());
        for p in predicates {
            let col = self.categorical(&p.column)?;
            let code = col
                .level_code(&p.equals)
                .ok_or_else(|| DpError::InvalidInput(format!("column {:?} has no level {:?}", p.column, p.equals)))?;
            conds.push((col, code));
        }
        Ok((0..self.rows).filter(|&r| conds.iter().all(|(c, code)| c.codes()[r] == *code)).collect())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            rows: rows.len(),
        }
    }

    /// Reads `path` and keeps exactly the columns declared in `schema`.
    pub fn from_csv(path: &Path, schema: &Schema) -> Result<Self> {
        schema.validate()?;
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut positions = Vec::new();
        for c in &schema.columns {
            let pos = headers
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| DpError::Schema(format!("column {:?} missing from {}", c.name, path.display())))?;
            positions.push(pos);
        }
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
        for record in reader.records() {
            let record = record?;
            for (slot, &pos) in raw.iter_mut().zip(&positions) {
                slot.push(record.get(pos).unwrap_or("").trim().to_string());
            }
        }
        let mut columns = Vec::new();
        for (c, cells) in schema.columns.iter().zip(raw) {
            let column = match &c.kind {
                ColumnKind::Numeric { lower, upper } => {
                    let values = cells
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            s.parse::<f64>().map_err(|_| {
                                DpError::InvalidInput(format!("column {:?} row {}: not a number: {s:?}", c.name, i + 1))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Column::Numeric(BoundedColumn::new(values, *lower, *upper)?)
                }
                ColumnKind::Categorical { levels, reference } => {
                    let labels: Vec<&str> = cells.iter().map(|s| s.as_str()).collect();
                    Column::Categorical(CategoricalColumn::from_labels(levels.clone(), reference, &labels)?)
                }
            };
            columns.push((c.name.clone(), column));
        }
        Table::new(columns)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in 0..self.rows {
            let row: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c {
                    Column::Numeric(c) => format!("{}", c.values()[r]),
                    Column::Categorical(c) => c.levels()[c.codes()[r]].clone(),
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Schema describing this table's columns.
    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .names
                .iter()
                .zip(&self.columns)
                .map(|(name, c)| ColumnSchema {
                    name: name.clone(),
                    kind: match c {
                        Column::Numeric(c) => ColumnKind::Numeric { lower: c.lower(), upper: c.upper() },
                        Column::Categorical(c) => ColumnKind::Categorical {
                            levels: c.levels().to_vec(),
                            reference: c.levels()[c.reference()].clone(),
                        },
                    },
                })
                .collect(),
        }
    }
}
