use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::Matrix;

/// Model parameters (or any parameter-shaped direction) as an ordered list of
/// layer tensors. Bias vectors are stored as n×1 matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Matrix>,
}

impl ModelParams {
    pub fn new(layers: Vec<Matrix>) -> Self {
        Self { layers }
    }

    pub fn zeros_like(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Matrix::shape).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    pub fn check_shapes(&self, shapes: &[(usize, usize)]) -> Result<()> {
        let own = self.shapes();
        if own != shapes {
            return Err(shape_err(format!("{shapes:?}"), format!("{own:?}")));
        }
        Ok(())
    }

    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(alpha, b);
        }
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        ModelParams::new(
            self.layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.sub(b))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> ModelParams {
        ModelParams::new(self.layers.iter().map(|m| m.scale(s)).collect())
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(Matrix::frobenius_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// Concatenation of every entry, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for the given layer shapes.
    pub fn unflatten(flat: &[f64], shapes: &[(usize, usize)]) -> Result<ModelParams> {
        let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if flat.len() != total {
            return Err(shape_err(format!("{total} values"), format!("{}", flat.len())));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(shapes.len());
        for &(r, c) in shapes {
            layers.push(Matrix::new(r, c, flat[offset..offset + r * c].to_vec())?);
            offset += r * c;
        }
        Ok(ModelParams::new(layers))
    }

    /// Entrywise mean of equally-shaped parameter sets.
    pub fn mean(items: &[&ModelParams]) -> ModelParams {
        let first = items[0];
        let mut acc = ModelParams::zeros_like(&first.shapes());
        for p in items {
            acc.axpy(1.0, p);
        }
        acc.scale(1.0 / items.len() as f64)
    }
}
