use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("problem declares no variables")]
    NoVariables,
    #[error("constraint `{constraint}` is {rows}x{cols}, expected a square matrix")]
    NotSquare {
        constraint: String,
        rows: usize,
        cols: usize,
    },
    #[error("constraint `{constraint}` is not symmetric (skew {skew:.3e})")]
    NotSymmetric { constraint: String, skew: f64 },
    #[error("unknown variable index {0}")]
    UnknownVariable(usize),
    #[error("matrix is not symmetric (skew {0:.3e})")]
    NonSymmetricInput(f64),
    #[error("empty matrix")]
    Empty,
}
