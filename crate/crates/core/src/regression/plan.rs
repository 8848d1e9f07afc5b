use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DesignColumn;

/// Treatment of one entry (i <= j) of S.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryRole {
    /// Receives its own noise draw. Entries sharing a `unit` form a group
    /// whose total change under one record is at most 1.
    Noised { unit: usize },
    /// Always equal to another entry; copies that entry's noisy value.
    Duplicate { of: (usize, usize) },
    /// Zero by construction; never noised.
    StructuralZero,
}

/// Which entries of S get noise and the resulting sensitivity totals, for a
/// design on the unit scale (every entry of z z^T lies in [-1, 1]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPlan {
    dim: usize,
    roles: Vec<EntryRole>,
    units: usize,
}

fn packed(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum GroupKey {
    /// All dummies of `cat` times one other column.
    WithColumn { cat: usize, other: usize },
    /// Dummy diagonal of `cat` when there is no intercept to copy from.
    Diagonal { cat: usize },
    /// Dummies of two different categorical predictors.
    Cross { a: usize, b: usize },
}

pub fn sensitivity_plan(layout: &[DesignColumn]) -> SensitivityPlan {
    let dim = layout.len();
    let intercept = layout.iter().position(|c| *c == DesignColumn::Intercept);
    let mut roles = vec![EntryRole::StructuralZero; dim * (dim + 1) / 2];
    let mut groups: HashMap<GroupKey, usize> = HashMap::new();
    let mut units = 0usize;
    let mut unit_for = |key: Option<GroupKey>, units: &mut usize| -> usize {
        match key {
            None => {
                *units += 1;
                *units - 1
            }
            Some(k) => *groups.entry(k).or_insert_with(|| {
                *units += 1;
                *units - 1
            }),
        }
    };
    for i in 0..dim {
        for j in i..dim {
            let role = match (layout[i], layout[j]) {
                (DesignColumn::Dummy { cat: a, level: la }, DesignColumn::Dummy { cat: b, level: lb }) if a == b => {
                    if la != lb {
                        EntryRole::StructuralZero
                    } else if let Some(c) = intercept {
                        EntryRole::Duplicate { of: (c.min(i), c.max(i)) }
                    } else {
                        EntryRole::Noised { unit: unit_for(Some(GroupKey::Diagonal { cat: a }), &mut units) }
                    }
                }
                (DesignColumn::Dummy { cat: a, .. }, DesignColumn::Dummy { cat: b, .. }) => {
                    EntryRole::Noised { unit: unit_for(Some(GroupKey::Cross { a: a.min(b), b: a.max(b) }), &mut units) }
                }
                (DesignColumn::Dummy { cat, .. }, _) => {
                    EntryRole::Noised { unit: unit_for(Some(GroupKey::WithColumn { cat, other: j }), &mut units) }
                }
                (_, DesignColumn::Dummy { cat, .. }) => {
                    EntryRole::Noised { unit: unit_for(Some(GroupKey::WithColumn { cat, other: i }), &mut units) }
                }
                _ => EntryRole::Noised { unit: unit_for(None, &mut units) },
            };
            roles[packed(dim, i, j)] = role;
        }
    }
    SensitivityPlan { dim, roles, units }
}

impl SensitivityPlan {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self, i: usize, j: usize) -> EntryRole {
        self.roles[packed(self.dim, i, j)]
    }

    /// Number of sensitivity-1 units (single entries or groups).
    pub fn units(&self) -> usize {
        self.units
    }

    /// l1 sensitivity of the vector of noised entries.
    pub fn l1_total(&self) -> f64 {
        self.units as f64
    }

    /// l2 sensitivity of the vector of noised entries; each unit changes by
    /// at most 1 in l1, hence in l2.
    pub fn l2_total(&self) -> f64 {
        (self.units as f64).sqrt()
    }

    /// Bound on the l2 norm of a row of [X, Y] on the unit scale.
    pub fn row_l2_bound(&self) -> f64 {
        (self.dim as f64).sqrt()
    }

    /// Worst-case count of entries in and above the diagonal.
    pub fn unstructured_l1(&self) -> f64 {
        (self.dim * (self.dim + 1) / 2) as f64
    }

    /// Noised entries (i <= j).
    pub fn noised_entries(&self) -> Vec<(usize, usize)> {
        self.entries_where(|r| matches!(r, EntryRole::Noised { .. }))
    }

    pub fn structural_zeros(&self) -> Vec<(usize, usize)> {
        self.entries_where(|r| matches!(r, EntryRole::StructuralZero))
    }

    pub fn duplicates(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::new();
        for i in 0..self.dim {
            for j in i..self.dim {
                if let EntryRole::Duplicate { of } = self.role(i, j) {
                    out.push(((i, j), of));
                }
            }
        }
        out
    }

    fn entries_where(&self, f: impl Fn(EntryRole) -> bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.dim {
            for j in i..self.dim {
                if f(self.role(i, j)) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}
