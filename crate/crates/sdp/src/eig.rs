use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::SdpError;

/// Smallest eigenvalue of a symmetric matrix. Inputs whose skew part exceeds
/// `1e-9` relative to the largest entry are rejected.
pub fn min_eig(m: &DMatrix<f64>) -> Result<f64, SdpError> {
    if m.is_empty() || !m.is_square() {
        return Err(SdpError::Empty);
    }
    let scale = m.amax().max(1.0);
    let skew = (m - m.transpose()).amax();
    if skew > 1e-9 * scale {
        return Err(SdpError::NonSymmetricInput(skew));
    }
    let s = 0.5 * (m + m.transpose());
    Ok(SymmetricEigen::new(s).eigenvalues.min())
}
