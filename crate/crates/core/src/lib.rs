//! Robust H2 state feedback for nonlinear plants through data-driven
//! Koopman linear predictors.
//!
//! The pipeline: simulate a plant ([`dynamics`]), lift recorded states
//! through an observable dictionary ([`observables`]), fit one linear
//! predictor per dataset by EDMD ([`edmd`]), enclose the fitted models in a
//! polytope ([`polytope`]), and synthesize a single lifted gain `u = S g(x)`
//! that bounds the H2 norm over every vertex ([`synthesis`]).
//! [`experiments`] wires the stages together for the CLI.

pub mod artifact;
pub mod dynamics;
pub mod edmd;
pub mod experiments;
pub mod linalg;
pub mod observables;
pub mod polytope;
pub mod synthesis;
