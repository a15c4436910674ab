use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::SdpError;
use crate::expr::{AffineExpr, VarId};
use crate::ipm::{self, SolverOptions};
use crate::solution::SdpSolution;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Symmetric,
    Rectangular,
}

#[derive(Clone, Debug)]
pub struct MatrixVariable {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
    pub(crate) offset: usize,
}

impl MatrixVariable {
    /// Number of free scalars: `n(n+1)/2` for symmetric, `rows·cols` otherwise.
    pub fn scalar_count(&self) -> usize {
        match self.structure {
            Structure::Symmetric => self.rows * (self.rows + 1) / 2,
            Structure::Rectangular => self.rows * self.cols,
        }
    }

    /// Matrix position `(a, b)` of the k-th scalar. Symmetric variables use
    /// the upper triangle in row-major order.
    pub(crate) fn position(&self, k: usize) -> (usize, usize) {
        match self.structure {
            Structure::Rectangular => (k / self.cols, k % self.cols),
            Structure::Symmetric => {
                let n = self.rows;
                let mut a = 0;
                let mut rem = k;
                while rem >= n - a {
                    rem -= n - a;
                    a += 1;
                }
                (a, a + rem)
            }
        }
    }

    pub(crate) fn unpack(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for k in 0..self.scalar_count() {
            let (a, b) = self.position(k);
            let v = y[self.offset + k];
            m[(a, b)] = v;
            if self.structure == Structure::Symmetric {
                m[(b, a)] = v;
            }
        }
        m
    }
}

/// `expr ⪰ margin · I`. When `margin` is `None` the solver-wide strictness
/// margin applies.
#[derive(Clone, Debug)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineExpr,
    pub margin: Option<f64>,
}

/// Sparse symmetric coefficient matrix, both triangles stored.
pub(crate) type Triplets = Vec<(usize, usize, f64)>;

#[derive(Clone, Debug)]
pub(crate) struct CompiledBlock {
    pub size: usize,
    /// Constant term F₀ (before the margin shift).
    pub constant: DMatrix<f64>,
    pub margin: f64,
    /// (scalar index, coefficient matrix F_k)
    pub coeffs: Vec<(usize, Triplets)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    pub scalars: usize,
    /// objective c (minimize cᵀy)
    pub objective: DVector<f64>,
    pub blocks: Vec<CompiledBlock>,
}

#[derive(Clone, Debug, Default)]
pub struct Problem {
    vars: Vec<MatrixVariable>,
    constraints: Vec<LmiConstraint>,
    objective: Vec<(VarId, DMatrix<f64>)>,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        structure: Structure,
    ) -> VarId {
        assert!(rows > 0 && cols > 0, "variable must be non-empty");
        if structure == Structure::Symmetric {
            assert_eq!(rows, cols, "symmetric variable must be square");
        }
        let offset = self.scalar_count();
        self.vars.push(MatrixVariable {
            name: name.into(),
            rows,
            cols,
            structure,
            offset,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn symmetric(&mut self, name: impl Into<String>, n: usize) -> VarId {
        self.add_variable(name, n, n, Structure::Symmetric)
    }

    pub fn rectangular(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.add_variable(name, rows, cols, Structure::Rectangular)
    }

    pub fn scalar(&mut self, name: impl Into<String>) -> VarId {
        self.add_variable(name, 1, 1, Structure::Rectangular)
    }

    pub fn variables(&self) -> &[MatrixVariable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn variable(&self, id: VarId) -> &MatrixVariable {
        &self.vars[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.vars.iter().map(|v| v.scalar_count()).sum()
    }

    /// The variable as an expression.
    pub fn var(&self, id: VarId) -> AffineExpr {
        let v = &self.vars[id.0];
        AffineExpr::variable(id, v.rows, v.cols)
    }

    /// Require `expr ⪰ ε·I` with the solver's strictness margin ε.
    pub fn add_lmi(&mut self, name: impl Into<String>, expr: AffineExpr) -> Result<(), SdpError> {
        self.push_lmi(name.into(), expr, None)
    }

    /// Require `expr ⪰ margin·I` with an explicit margin (may be zero).
    pub fn add_lmi_with_margin(
        &mut self,
        name: impl Into<String>,
        expr: AffineExpr,
        margin: f64,
    ) -> Result<(), SdpError> {
        self.push_lmi(name.into(), expr, Some(margin))
    }

    fn push_lmi(&mut self, name: String, expr: AffineExpr, margin: Option<f64>) -> Result<(), SdpError> {
        if expr.nrows() != expr.ncols() || expr.nrows() == 0 {
            return Err(SdpError::NotSquare {
                constraint: name,
                rows: expr.nrows(),
                cols: expr.ncols(),
            });
        }
        if let Some(t) = expr.terms.iter().find(|t| t.var.0 >= self.vars.len()) {
            return Err(SdpError::UnknownVariable(t.var.0));
        }
        self.constraints.push(LmiConstraint { name, expr, margin });
        Ok(())
    }

    /// Add `⟨weight, V⟩` to the minimized objective.
    pub fn minimize(&mut self, id: VarId, weight: DMatrix<f64>) {
        let v = &self.vars[id.0];
        assert_eq!(weight.shape(), (v.rows, v.cols), "objective weight shape");
        self.objective.push((id, weight));
    }

    /// Add `tr(V)` to the minimized objective.
    pub fn minimize_trace(&mut self, id: VarId) {
        let n = self.vars[id.0].rows;
        assert_eq!(n, self.vars[id.0].cols, "trace of non-square variable");
        self.minimize(id, DMatrix::identity(n, n));
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
        let compiled = self.compile(opts.margin)?;
        let raw = ipm::solve(&compiled, opts)?;
        Ok(SdpSolution::from_raw(self, &compiled, raw, opts))
    }

    pub(crate) fn compile(&self, default_margin: f64) -> Result<Compiled, SdpError> {
        if self.vars.is_empty() {
            return Err(SdpError::NoVariables);
        }
        let m = self.scalar_count();

        let mut objective = DVector::zeros(m);
        for (id, w) in &self.objective {
            let v = &self.vars[id.0];
            for k in 0..v.scalar_count() {
                let (a, b) = v.position(k);
                objective[v.offset + k] += match v.structure {
                    Structure::Symmetric if a != b => w[(a, b)] + w[(b, a)],
                    _ => w[(a, b)],
                };
            }
        }

        let mut blocks = Vec::with_capacity(self.constraints.len());
        for con in &self.constraints {
            let n = con.expr.nrows();
            let constant = con.expr.constant.clone();
            check_symmetric(&con.name, &constant)?;

            let mut dense: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
            for term in &con.expr.terms {
                let v = &self.vars[term.var.0];
                for k in 0..v.scalar_count() {
                    let (a, b) = v.position(k);
                    let coef = term_derivative(term, v.structure, a, b);
                    if coef.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    *dense
                        .entry(v.offset + k)
                        .or_insert_with(|| DMatrix::zeros(n, n)) += coef;
                }
            }

            let mut coeffs = Vec::with_capacity(dense.len());
            for (k, f) in dense {
                check_symmetric(&con.name, &f)?;
                let mut trip = Vec::new();
                for j in 0..n {
                    for i in 0..n {
                        let val = 0.5 * (f[(i, j)] + f[(j, i)]);
                        if val != 0.0 {
                            trip.push((i, j, val));
                        }
                    }
                }
                if !trip.is_empty() {
                    coeffs.push((k, trip));
                }
            }

            blocks.push(CompiledBlock {
                size: n,
                constant: 0.5 * (&constant + constant.transpose()),
                margin: con.margin.unwrap_or(default_margin),
                coeffs,
            });
        }

        Ok(Compiled {
            scalars: m,
            objective,
            blocks,
        })
    }

    /// Plain-text dump of the assembled problem (variable table, objective
    /// vector and every constraint block as F₀ plus sparse F_k), meant for
    /// cross-checking against external solvers.
    pub fn dump(&self, default_margin: f64) -> Result<String, SdpError> {
        crate::dump::render(self, &self.compile(default_margin)?)
    }
}

fn term_derivative(term: &crate::expr::Term, structure: Structure, a: usize, b: usize) -> DMatrix<f64> {
    // d/dV_ab of L V R is L[:,a] R[b,:]; of L Vᵀ R it is L[:,b] R[a,:].
    let outer = |i: usize, j: usize| term.left.column(i) * term.right.row(j);
    match structure {
        Structure::Symmetric if a != b => outer(a, b) + outer(b, a),
        Structure::Symmetric => outer(a, a),
        Structure::Rectangular if term.transposed => outer(b, a),
        Structure::Rectangular => outer(a, b),
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<(), SdpError> {
    let scale = m.amax().max(1.0);
    let skew = (m - m.transpose()).amax();
    if skew > 1e-12 * scale {
        return Err(SdpError::NotSymmetric {
            constraint: name.to_string(),
            skew,
        });
    }
    Ok(())
}
