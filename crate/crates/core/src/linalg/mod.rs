//! Dense kernels shared by the optimizers: QR eigenbasis refresh,
//! Newton–Schulz orthogonalization, truncated SVD and the spectral norm.
//!
//! Everything here is a pure function of its inputs (randomized routines use
//! fixed internal seeds), so kernels can be called from concurrent clients.

mod matrix;
mod newton_schulz;
mod qr;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use newton_schulz::{
    newton_schulz, orthogonality_defect, NsVariant, DEFAULT_NS_EPS, DEFAULT_NS_STEPS,
    QUINTIC_COEFFS,
};
pub use qr::{householder_qr, qr_eigenvectors};
pub use rng::Rng;
pub use svd::{
    jacobi_svd, spectral_norm, truncated_svd, Svd, DEFAULT_SPECTRAL_ITERS, DEFAULT_SPECTRAL_TOL,
    JACOBI_MAX_DIM,
};
