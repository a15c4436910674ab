//! Observable dictionaries: the lift `x ↦ g(x) ∈ R^N`.
//!
//! Feature order is fixed. For monomial dictionaries the order is the order
//! of the exponent list; the built-in degree-2 dictionary on two states is
//! `[x1, x2, x1², x2², x1·x2]`, so state coordinates come first and weight
//! matrices written against that layout line up with the features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObservableError {
    #[error("state has dimension {got}, dictionary expects {expected}")]
    StateDim { expected: usize, got: usize },
    #[error("probe index {index} out of range for a field of {len} points")]
    ProbeIndex { index: usize, len: usize },
    #[error("exponent tuple {index} has {got} entries, expected {expected}")]
    ExponentLength { index: usize, expected: usize, got: usize },
    #[error("dictionary has no features")]
    Empty,
    #[error("non-finite state")]
    NonFinite,
    #[error("unknown dictionary `{0}` (known: monomials2, probes)")]
    UnknownName(String),
}

/// A named, serializable dictionary. The serialized form doubles as the
/// descriptor stored next to fitted models and gains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dictionary {
    /// `g_j(x) = Π_i x_i^{e_ji}`
    Monomials {
        state_dim: usize,
        exponents: Vec<Vec<u32>>,
    },
    /// Point samples of a discretized field.
    Probes { grid: usize, indices: Vec<usize> },
}

impl Dictionary {
    pub fn monomials(state_dim: usize, exponents: Vec<Vec<u32>>) -> Result<Self, ObservableError> {
        if exponents.is_empty() {
            return Err(ObservableError::Empty);
        }
        for (index, e) in exponents.iter().enumerate() {
            if e.len() != state_dim {
                return Err(ObservableError::ExponentLength {
                    index,
                    expected: state_dim,
                    got: e.len(),
                });
            }
        }
        Ok(Self::Monomials { state_dim, exponents })
    }

    /// `[x1, x2, x1², x2², x1·x2]`
    pub fn monomials_deg2() -> Self {
        Self::Monomials {
            state_dim: 2,
            exponents: vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2], vec![1, 1]],
        }
    }

    pub fn probes(grid: usize, indices: Vec<usize>) -> Result<Self, ObservableError> {
        if indices.is_empty() {
            return Err(ObservableError::Empty);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= grid) {
            return Err(ObservableError::ProbeIndex { index, len: grid });
        }
        Ok(Self::Probes { grid, indices })
    }

    /// Registry lookup used by configuration files.
    pub fn from_name(name: &str, grid: usize, probe_count: usize) -> Result<Self, ObservableError> {
        match name {
            "monomials2" => Ok(Self::monomials_deg2()),
            "probes" => Self::probes(grid, evenly_spaced_probes(grid, probe_count)),
            other => Err(ObservableError::UnknownName(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Monomials { .. } => "monomials",
            Self::Probes { .. } => "probes",
        }
    }

    /// Feature count `N`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Monomials { exponents, .. } => exponents.len(),
            Self::Probes { indices, .. } => indices.len(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Monomials { state_dim, .. } => *state_dim,
            Self::Probes { grid, .. } => *grid,
        }
    }

    /// True when every state coordinate appears as a feature of its own.
    pub fn embeds_state(&self) -> bool {
        match self {
            Self::Monomials { state_dim, exponents } => (0..*state_dim).all(|i| {
                exponents
                    .iter()
                    .any(|e| e.iter().enumerate().all(|(j, &p)| p == u32::from(i == j)))
            }),
            Self::Probes { grid, indices } => (0..*grid).all(|i| indices.contains(&i)),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::Monomials { exponents, .. } => exponents
                .iter()
                .map(|e| {
                    let parts: Vec<String> = e
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0)
                        .map(|(i, &p)| if p == 1 { format!("x{}", i + 1) } else { format!("x{}^{p}", i + 1) })
                        .collect();
                    if parts.is_empty() {
                        "1".to_string()
                    } else {
                        parts.join("*")
                    }
                })
                .collect(),
            Self::Probes { indices, .. } => indices.iter().map(|i| format!("y[{i}]")).collect(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ObservableError> {
        if x.len() != self.state_dim() {
            return Err(ObservableError::StateDim {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ObservableError::NonFinite);
        }
        Ok(match self {
            Self::Monomials { exponents, .. } => exponents
                .iter()
                .map(|e| e.iter().zip(x).fold(1.0, |acc, (&p, &v)| acc * v.powi(p as i32)))
                .collect(),
            Self::Probes { indices, .. } => indices.iter().map(|&i| x[i]).collect(),
        })
    }
}

pub fn monomials_deg2(x: [f64; 2]) -> [f64; 5] {
    [x[0], x[1], x[0] * x[0], x[1] * x[1], x[0] * x[1]]
}

/// The field sampled at `probes`, in probe order.
pub fn probe_dictionary(field: &[f64], probes: &[usize]) -> Result<Vec<f64>, ObservableError> {
    probes
        .iter()
        .map(|&i| {
            field.get(i).copied().ok_or(ObservableError::ProbeIndex {
                index: i,
                len: field.len(),
            })
        })
        .collect()
}

/// `round(grid · (j + 1/2) / count)` for `j = 0..count`: cell midpoints of
/// an even partition of the grid. For 128 points and 7 probes this gives
/// 9, 27, 46, 64, 82, 101, 119.
pub fn evenly_spaced_probes(grid: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|j| ((grid as f64) * (j as f64 + 0.5) / count as f64).round() as usize)
        .collect()
}
