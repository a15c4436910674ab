//! A small dense semidefinite programming solver for linear matrix
//! inequalities.
//!
//! Problems are stated in terms of matrix variables (symmetric or
//! rectangular), a linear objective, and constraints `F(V₁, …, V_k) ⪰ εI`
//! where `F` is affine in the variables:
//!
//! ```
//! use dense_sdp::{AffineExpr, Problem, SolverOptions};
//! use nalgebra::DMatrix;
//!
//! // minimize w  s.t.  [[w, 3], [3, 1]] ⪰ 0
//! let mut p = Problem::new();
//! let w = p.scalar("w");
//! let three = AffineExpr::constant(DMatrix::from_element(1, 1, 3.0));
//! let lmi = AffineExpr::symmetric_blocks(vec![
//!     vec![Some(p.var(w)), Some(three)],
//!     vec![None, Some(AffineExpr::identity(1))],
//! ]);
//! p.add_lmi_with_margin("schur", lmi, 0.0).unwrap();
//! p.minimize_trace(w);
//! let sol = p.solve(&SolverOptions::default()).unwrap();
//! assert!((sol.objective - 9.0).abs() < 1e-6);
//! ```

mod dump;
mod eig;
mod error;
mod expr;
mod ipm;
mod problem;
mod solution;

pub use eig::min_eig;
pub use error::SdpError;
pub use expr::{AffineExpr, VarId};
pub use ipm::SolverOptions;
pub use problem::{LmiConstraint, MatrixVariable, Problem, Structure};
pub use solution::{Diagnostics, SdpSolution, Status};
