use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Quintic iteration coefficients `(a, b, c)`.
pub const QUINTIC_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

pub const DEFAULT_NS_STEPS: usize = 5;
pub const DEFAULT_NS_EPS: f64 = 1e-7;

/// Polynomial used by the Newton–Schulz orthogonalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsVariant {
    /// `X ← aX + (bA + cA²)X`, `A = XXᵀ`. Inflates small singular values
    /// quickly but settles into a band around 1 instead of converging.
    #[default]
    Quintic,
    /// `X ← ½X(3I − A)`. Converges quadratically to the polar factor once all
    /// singular values are away from zero.
    Classic,
}

/// Approximate orthogonal polar factor of `g`.
///
/// Normalizes by `‖G‖_F + eps`, works on the wide orientation (transposing
/// when rows > cols) and transposes back.
pub fn newton_schulz(g: &Matrix, steps: usize, eps: f64, variant: NsVariant) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::InvalidArgument("newton_schulz needs steps >= 1".into()));
    }
    g.check_finite("newton_schulz input")?;
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("newton_schulz on a zero matrix"));
    }
    let tall = g.rows() > g.cols();
    let mut x = g.scale(1.0 / (norm + eps));
    if tall {
        x = x.transpose();
    }
    let (a, b, c) = QUINTIC_COEFFS;
    for _ in 0..steps {
        let gram = x.matmul_t(&x);
        x = match variant {
            NsVariant::Quintic => {
                let gram2 = gram.matmul(&gram);
                let poly = gram.scale(b).add(&gram2.scale(c));
                let mut next = poly.matmul(&x);
                next.axpy(a, &x);
                next
            }
            NsVariant::Classic => {
                let mut next = gram.matmul(&x).scale(-0.5);
                next.axpy(1.5, &x);
                next
            }
        };
    }
    if tall {
        x = x.transpose();
    }
    x.check_finite("newton_schulz output")?;
    Ok(x)
}

/// `‖XXᵀ − I‖_F` measured on the wide orientation of `x`.
pub fn orthogonality_defect(x: &Matrix) -> f64 {
    let wide = if x.rows() > x.cols() {
        x.transpose()
    } else {
        x.clone()
    };
    wide.matmul_t(&wide)
        .sub(&Matrix::identity(wide.rows()))
        .frobenius_norm()
}
