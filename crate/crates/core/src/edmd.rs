//! Snapshot matrices and the EDMD least-squares fit `[A B] = Ĝ [G; U]†`.
//!
//! Only the lifted state `Ĝ` is regressed. Regressing `[Ĝ; U⁺]` and then
//! dropping the last `p` rows of the operator gives the same `[A B]`, so the
//! input block is never formed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{all_finite, matrix_serde, pinv};
use crate::observables::{Dictionary, ObservableError};

#[derive(Debug, Error)]
pub enum EdmdError {
    #[error("dataset has no snapshot pairs")]
    Empty,
    #[error("{what}: dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("segment {0} must have one more state than inputs")]
    Segment(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

/// A recorded run: `states[k+1]` follows `states[k]` under `inputs[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

/// Triples `(x_k, u_k, x_{k+1})`, stored as segments so that multi-step
/// trajectories do not duplicate states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDataset {
    pub label: String,
    pub dt: f64,
    pub sampler: String,
    pub seed: u64,
    pub segments: Vec<Segment>,
}

impl SnapshotDataset {
    pub fn from_triples(
        label: impl Into<String>,
        dt: f64,
        triples: impl IntoIterator<Item = (Vec<f64>, Vec<f64>, Vec<f64>)>,
    ) -> Self {
        Self {
            label: label.into(),
            dt,
            sampler: "explicit".into(),
            seed: 0,
            segments: triples
                .into_iter()
                .map(|(x, u, y)| Segment {
                    states: vec![x, y],
                    inputs: vec![u],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.inputs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn triples(&self) -> impl Iterator<Item = (&[f64], &[f64], &[f64])> {
        self.segments.iter().flat_map(|s| {
            s.inputs
                .iter()
                .enumerate()
                .map(move |(k, u)| (s.states[k].as_slice(), u.as_slice(), s.states[k + 1].as_slice()))
        })
    }

    /// `(state_dim, input_dim)`, checked uniform over all triples.
    pub fn dims(&self) -> Result<(usize, usize), EdmdError> {
        let (x0, u0, _) = self.triples().next().ok_or(EdmdError::Empty)?;
        let (n, p) = (x0.len(), u0.len());
        for (i, s) in self.segments.iter().enumerate() {
            if s.states.len() != s.inputs.len() + 1 {
                return Err(EdmdError::Segment(i));
            }
            for x in &s.states {
                if x.len() != n {
                    return Err(EdmdError::Dimension {
                        what: "state",
                        expected: n,
                        got: x.len(),
                    });
                }
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(EdmdError::NonFinite("state"));
                }
            }
            for u in &s.inputs {
                if u.len() != p {
                    return Err(EdmdError::Dimension {
                        what: "input",
                        expected: p,
                        got: u.len(),
                    });
                }
                if !u.iter().all(|v| v.is_finite()) {
                    return Err(EdmdError::NonFinite("input"));
                }
            }
        }
        Ok((n, p))
    }

    /// Hex SHA-256 over the label, step and the raw bits of every sample.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        h.update([0]);
        h.update(self.dt.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        for s in &self.segments {
            h.update((s.states.len() as u64).to_le_bytes());
            for v in s.states.iter().chain(&s.inputs) {
                h.update((v.len() as u64).to_le_bytes());
                for x in v {
                    h.update(x.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrices {
    /// `[g(x_1) ... g(x_M)]`
    pub g: DMatrix<f64>,
    /// `[g(x_2) ... g(x_{M+1})]`
    pub g_next: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub dataset_id: String,
    pub dictionary: Option<Dictionary>,
}

impl SnapshotMatrices {
    pub fn new(g: DMatrix<f64>, g_next: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self, EdmdError> {
        if g.ncols() == 0 {
            return Err(EdmdError::Empty);
        }
        if g_next.shape() != g.shape() {
            return Err(EdmdError::Dimension {
                what: "G-hat columns/rows",
                expected: g.nrows(),
                got: g_next.nrows(),
            });
        }
        if u.ncols() != g.ncols() {
            return Err(EdmdError::Dimension {
                what: "U columns",
                expected: g.ncols(),
                got: u.ncols(),
            });
        }
        Ok(Self {
            g,
            g_next,
            u,
            dataset_id: "synthetic".into(),
            dictionary: None,
        })
    }

    pub fn features(&self) -> usize {
        self.g.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.u.nrows()
    }

    pub fn samples(&self) -> usize {
        self.g.ncols()
    }
}

pub fn assemble(dataset: &SnapshotDataset, dict: &Dictionary) -> Result<SnapshotMatrices, EdmdError> {
    let (n, p) = dataset.dims()?;
    if n != dict.state_dim() {
        return Err(EdmdError::Dimension {
            what: "dataset state vs dictionary",
            expected: dict.state_dim(),
            got: n,
        });
    }
    let m = dataset.len();
    let nf = dict.dim();
    let mut g = DMatrix::zeros(nf, m);
    let mut g_next = DMatrix::zeros(nf, m);
    let mut u = DMatrix::zeros(p, m);
    for (k, (x, uk, y)) in dataset.triples().enumerate() {
        g.set_column(k, &nalgebra::DVector::from_vec(dict.evaluate(x)?));
        g_next.set_column(k, &nalgebra::DVector::from_vec(dict.evaluate(y)?));
        u.set_column(k, &nalgebra::DVector::from_column_slice(uk));
    }
    Ok(SnapshotMatrices {
        g,
        g_next,
        u,
        dataset_id: dataset.id(),
        dictionary: Some(dict.clone()),
    })
}

/// `g⁺ = A g + B u + B_w w`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub features: usize,
    pub inputs: usize,
    pub disturbances: usize,
    #[serde(with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub b_w: DMatrix<f64>,
    pub residual: f64,
    /// Set when the regressor matrix was identically zero.
    pub degenerate: bool,
    pub dataset_id: String,
    pub dictionary: Option<Dictionary>,
}

impl LinearPredictor {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, b_w: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "A must be square");
        assert_eq!(b.nrows(), a.nrows(), "B rows");
        assert_eq!(b_w.nrows(), a.nrows(), "B_w rows");
        Self {
            features: a.nrows(),
            inputs: b.ncols(),
            disturbances: b_w.ncols(),
            a,
            b,
            b_w,
            residual: 0.0,
            degenerate: false,
            dataset_id: "synthetic".into(),
            dictionary: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.a) && all_finite(&self.b) && all_finite(&self.b_w)
    }

    /// Shape and finiteness check for deserialized predictors.
    pub fn validate(&self) -> Result<(), EdmdError> {
        let n = self.features;
        let dims = [
            ("A rows", self.a.nrows(), n),
            ("A cols", self.a.ncols(), n),
            ("B rows", self.b.nrows(), n),
            ("B cols", self.b.ncols(), self.inputs),
            ("B_w rows", self.b_w.nrows(), n),
            ("B_w cols", self.b_w.ncols(), self.disturbances),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(EdmdError::Dimension { what, expected, got });
            }
        }
        if !self.is_finite() {
            return Err(EdmdError::NonFinite("predictor entry"));
        }
        Ok(())
    }

    /// Propagate `g` through the model for the given inputs, without
    /// disturbance.
    pub fn predict(&self, g: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a * g + &self.b * u
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub rel_cutoff: f64,
    /// Disturbance input matrix; `None` means a column of ones.
    pub b_w: Option<DMatrix<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rel_cutoff: 1e-12,
            b_w: None,
        }
    }
}

pub fn fit_predictor(s: &SnapshotMatrices, opts: &FitOptions) -> Result<LinearPredictor, EdmdError> {
    let (n, p, m) = (s.features(), s.inputs(), s.samples());
    if m == 0 {
        return Err(EdmdError::Empty);
    }
    if !(all_finite(&s.g) && all_finite(&s.g_next) && all_finite(&s.u)) {
        return Err(EdmdError::NonFinite("snapshot entry"));
    }
    let mut z = DMatrix::zeros(n + p, m);
    z.rows_mut(0, n).copy_from(&s.g);
    z.rows_mut(n, p).copy_from(&s.u);
    let degenerate = z.iter().all(|v| *v == 0.0);
    let k = &s.g_next * pinv(&z, opts.rel_cutoff);
    let b_w = match &opts.b_w {
        Some(bw) => {
            if bw.nrows() != n {
                return Err(EdmdError::Dimension {
                    what: "B_w rows",
                    expected: n,
                    got: bw.nrows(),
                });
            }
            bw.clone()
        }
        None => DMatrix::from_element(n, 1, 1.0),
    };
    let mut pred = LinearPredictor::new(k.columns(0, n).into_owned(), k.columns(n, p).into_owned(), b_w);
    pred.residual = residual(&pred, s)?;
    pred.degenerate = degenerate;
    pred.dataset_id = s.dataset_id.clone();
    pred.dictionary = s.dictionary.clone();
    Ok(pred)
}

/// `‖Ĝ − A G − B U‖_F`
pub fn residual(pred: &LinearPredictor, s: &SnapshotMatrices) -> Result<f64, EdmdError> {
    if pred.a.nrows() != s.features() || pred.b.ncols() != s.inputs() {
        return Err(EdmdError::Dimension {
            what: "predictor vs snapshot features",
            expected: s.features(),
            got: pred.a.nrows(),
        });
    }
    Ok((&s.g_next - pred.predict(&s.g, &s.u)).norm())
}
