use nalgebra::{DMatrix, SymmetricEigen};

use crate::expr::VarId;
use crate::ipm::{RawSolution, SolverOptions};
use crate::problem::{Compiled, Problem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIterations => "max-iterations",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub iterations: usize,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// `min_j λ_min(F_j(y)) - ε_j` over all constraints at the returned point.
    pub min_slack: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: Status,
    /// `cᵀy` at the returned point.
    pub objective: f64,
    pub diagnostics: Diagnostics,
    /// On infeasibility: block-diagonal `Y ⪰ 0` with `⟨F_k, Y⟩ ≈ 0` for all k
    /// and `⟨F₀ - εI, Y⟩ = -1`, one block per constraint.
    pub certificate: Option<Vec<DMatrix<f64>>>,
    values: Vec<DMatrix<f64>>,
    constraint_values: Vec<DMatrix<f64>>,
}

impl SdpSolution {
    pub(crate) fn from_raw(problem: &Problem, compiled: &Compiled, raw: RawSolution, _opts: &SolverOptions) -> Self {
        let values: Vec<DMatrix<f64>> = problem.variables().iter().map(|v| v.unpack(&raw.y)).collect();
        let constraint_values: Vec<DMatrix<f64>> = compiled
            .blocks
            .iter()
            .map(|blk| {
                let mut f = blk.constant.clone();
                for (k, trip) in &blk.coeffs {
                    for &(r, c, v) in trip {
                        f[(r, c)] += raw.y[*k] * v;
                    }
                }
                f
            })
            .collect();
        let min_slack = compiled
            .blocks
            .iter()
            .zip(&constraint_values)
            .map(|(blk, f)| SymmetricEigen::new(f.clone()).eigenvalues.min() - blk.margin)
            .fold(f64::INFINITY, f64::min);
        let objective = compiled.objective.iter().zip(&raw.y).map(|(c, y)| c * y).sum();
        Self {
            status: raw.status,
            objective,
            diagnostics: Diagnostics {
                iterations: raw.iterations,
                relative_gap: raw.relative_gap,
                primal_infeasibility: raw.primal_infeasibility,
                dual_infeasibility: raw.dual_infeasibility,
                min_slack,
            },
            certificate: raw.certificate,
            values,
            constraint_values,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, id: VarId) -> &DMatrix<f64> {
        &self.values[id.index()]
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// Assembled `F_j(y)` for each constraint, in declaration order.
    pub fn constraint_values(&self) -> &[DMatrix<f64>] {
        &self.constraint_values
    }
}
