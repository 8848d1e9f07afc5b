//! Linear regression on noisy sufficient statistics.
//!
//! Bounded columns are rescaled to a unit range, S = [X, Y]^T [X, Y] is
//! perturbed by one of five mechanisms and regularized to be positive
//! definite, and plug-in estimates with asymptotic and bootstrap intervals
//! are mapped back to the original units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BoundedColumn, CategoricalColumn, Table};
use crate::error::{invalid_param, DpError, Result};

mod fit;
mod perturb;
mod plan;

pub use fit::{
    bhm_regression, bootstrap_draws, confidential_ols, dp_regression, fit_plugin, BhmEstimate, BootstrapCalibration,
    RegressionOptions, RegressionRelease, UnitFit,
};
pub use perturb::{
    min_eigenvalue, perturb_s, regularize, wishart_degrees_of_freedom, wishart_shift, NoiseLaw,
    NoisySufficientStatistic, RegressionMechanism, RegularizeOptions, PD_TOLERANCE,
};
pub use plan::{sensitivity_plan, EntryRole, SensitivityPlan};

/// Closed interval for one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Point estimates and intervals in the original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEstimate {
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub n_hat: f64,
    pub confidence: f64,
    pub ci_asymptotic: Vec<Interval>,
    pub ci_bootstrap: Option<Vec<Interval>>,
}

/// Response, predictors and intercept flag of a linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub response: (String, BoundedColumn),
    pub numeric: Vec<(String, BoundedColumn)>,
    pub categorical: Vec<(String, CategoricalColumn)>,
    pub intercept: bool,
}

/// Role of one column of [X, Y].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignColumn {
    Intercept,
    Numeric(usize),
    /// Indicator for `level` of categorical predictor `cat`.
    Dummy { cat: usize, level: usize },
    Response,
}

impl DesignSpec {
    pub fn new(
        response: (String, BoundedColumn),
        numeric: Vec<(String, BoundedColumn)>,
        categorical: Vec<(String, CategoricalColumn)>,
        intercept: bool,
    ) -> Result<Self> {
        let n = response.1.len();
        if numeric.iter().any(|(_, c)| c.len() != n) || categorical.iter().any(|(_, c)| c.len() != n) {
            return Err(DpError::InvalidInput("all design columns must have the same length".into()));
        }
        if categorical.iter().any(|(_, c)| c.levels().len() < 2) {
            return Err(DpError::InvalidInput("categorical predictors need at least two levels".into()));
        }
        let spec = Self { response, numeric, categorical, intercept };
        if spec.n_coefficients() == 0 {
            return Err(DpError::InvalidInput("the model has no coefficients".into()));
        }
        Ok(spec)
    }

    pub fn from_table(
        table: &Table,
        response: &str,
        numeric: &[&str],
        categorical: &[&str],
        intercept: bool,
    ) -> Result<Self> {
        let resp = (response.to_string(), table.numeric(response)?.clone());
        let nums = numeric
            .iter()
            .map(|n| Ok((n.to_string(), table.numeric(n)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        let cats = categorical
            .iter()
            .map(|n| Ok((n.to_string(), table.categorical(n)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(resp, nums, cats, intercept)
    }

    pub fn n_rows(&self) -> usize {
        self.response.1.len()
    }

    /// Column order of [X, Y]: intercept, numeric predictors, dummies (level
    /// order, reference dropped), response.
    pub fn layout(&self) -> Vec<DesignColumn> {
        let mut out = Vec::new();
        if self.intercept {
            out.push(DesignColumn::Intercept);
        }
        out.extend((0..self.numeric.len()).map(DesignColumn::Numeric));
        for (cat, (_, col)) in self.categorical.iter().enumerate() {
            out.extend(col.dummy_levels().into_iter().map(|level| DesignColumn::Dummy { cat, level }));
        }
        out.push(DesignColumn::Response);
        out
    }

    /// Number of coefficients p; S is (p+1) x (p+1).
    pub fn n_coefficients(&self) -> usize {
        self.layout().len() - 1
    }

    pub fn terms(&self) -> Vec<String> {
        self.layout()
            .into_iter()
            .filter_map(|c| match c {
                DesignColumn::Intercept => Some("intercept".to_string()),
                DesignColumn::Numeric(i) => Some(self.numeric[i].0.clone()),
                DesignColumn::Dummy { cat, level } => {
                    let (name, col) = &self.categorical[cat];
                    Some(format!("{name}={}", col.levels()[level]))
                }
                DesignColumn::Response => None,
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignSpec {
        DesignSpec {
            response: (self.response.0.clone(), self.response.1.select(rows)),
            numeric: self.numeric.iter().map(|(n, c)| (n.clone(), c.select(rows))).collect(),
            categorical: self.categorical.iter().map(|(n, c)| (n.clone(), c.select(rows))).collect(),
            intercept: self.intercept,
        }
    }
}

/// Per-column affine map `unit = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub intercept: bool,
    /// One entry per column of [X, Y], layout order.
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ScaleMap {
    fn response(&self) -> (f64, f64) {
        (*self.offsets.last().unwrap(), *self.scales.last().unwrap())
    }

    /// M and c with original = M unit + c.
    pub fn coefficient_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.offsets.len() - 1;
        let (oy, sy) = self.response();
        let mut m = DMatrix::zeros(p, p);
        let mut c = DVector::zeros(p);
        for j in usize::from(self.intercept)..p {
            m[(j, j)] = sy / self.scales[j];
        }
        if self.intercept {
            m[(0, 0)] = sy;
            for j in 1..p {
                m[(0, j)] = -sy * self.offsets[j] / self.scales[j];
            }
            c[0] = oy;
        }
        (m, c)
    }

    pub fn coefficients_to_original(&self, unit: &DVector<f64>) -> DVector<f64> {
        let (m, c) = self.coefficient_map();
        &m * unit + c
    }

    pub fn sigma2_to_original(&self, unit: f64) -> f64 {
        let (_, sy) = self.response();
        sy * sy * unit
    }

    pub fn covariance_to_original(&self, unit: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, _) = self.coefficient_map();
        &m * unit * m.transpose()
    }
}

/// [X, Y] on the unit scale plus what is needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDesign {
    /// n x (p+1), columns in layout order.
    pub z: DMatrix<f64>,
    pub layout: Vec<DesignColumn>,
    pub terms: Vec<String>,
    pub scale: ScaleMap,
}

impl UnitDesign {
    pub fn n_coefficients(&self) -> usize {
        self.layout.len() - 1
    }
}

/// Bounded columns go to [0, 1] via (x - L)/(U - L) with an intercept, and
/// to [-1, 1] via x / max(|L|, |U|) without one. Dummies and the intercept
/// are left alone.
pub fn rescale_design(spec: &DesignSpec) -> Result<UnitDesign> {
    let layout = spec.layout();
    let n = spec.n_rows();
    let mut offsets = Vec::with_capacity(layout.len());
    let mut scales = Vec::with_capacity(layout.len());
    let mut z = DMatrix::zeros(n, layout.len());
    let bounded = |col: &BoundedColumn| -> Result<(f64, f64)> {
        let (o, s) = if spec.intercept {
            (col.lower(), col.width())
        } else {
            (0.0, col.lower().abs().max(col.upper().abs()))
        };
        if s <= 0.0 {
            return Err(invalid_param("column bounds give a zero scale"));
        }
        Ok((o, s))
    };
    for (j, c) in layout.iter().enumerate() {
        match *c {
            DesignColumn::Intercept => {
                offsets.push(0.0);
                scales.push(1.0);
                z.column_mut(j).fill(1.0);
            }
            DesignColumn::Numeric(_) | DesignColumn::Response => {
                let col = match *c {
                    DesignColumn::Numeric(i) => &spec.numeric[i].1,
                    _ => &spec.response.1,
                };
                let (o, s) = bounded(col)?;
                offsets.push(o);
                scales.push(s);
                for (r, v) in col.values().iter().enumerate() {
                    z[(r, j)] = (v - o) / s;
                }
            }
            DesignColumn::Dummy { cat, level } => {
                offsets.push(0.0);
                scales.push(1.0);
                for (r, code) in spec.categorical[cat].1.codes().iter().enumerate() {
                    if *code == level {
                        z[(r, j)] = 1.0;
                    }
                }
            }
        }
    }
    Ok(UnitDesign { z, layout, terms: spec.terms(), scale: ScaleMap { intercept: spec.intercept, offsets, scales } })
}

/// S = z^T z, exactly symmetric.
pub fn compute_s(design: &UnitDesign) -> DMatrix<f64> {
    let s = design.z.transpose() * &design.z;
    (&s + s.transpose()) * 0.5
}
