//! Differential-privacy building blocks for a validation server: calibrated
//! noise mechanisms, a persistent budget accountant, summary statistics and
//! linear-regression inference on noisy sufficient statistics, plus an
//! experiment harness for utility metrics.

pub mod accountant;
pub mod data;
pub mod error;
pub mod eval;
pub mod privacy;
pub mod regression;
pub mod rng;
pub mod summary;

pub use accountant::{Accountant, BudgetLedger, ChargeOutcome, ChargePreview, ChargeRecord, Composition};
pub use data::{BoundedColumn, CategoricalColumn, Column, ColumnKind, ColumnSchema, Predicate, Schema, Table};
pub use error::{DpError, Result};
pub use privacy::{Budget, GlobalSensitivity, PrivacyParams, ZcdpParams};
pub use rng::RandomSource;
