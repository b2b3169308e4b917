//! Averaging and distances between optimizer states.

use super::{LayerStates, PreconditionerState};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{qr_eigenvectors, spectral_norm, Matrix, DEFAULT_SPECTRAL_ITERS, DEFAULT_SPECTRAL_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    /// Squared Frobenius norm of the difference over every stored tensor.
    Frobenius,
    /// Per layer, spectral norm of the curvature-statistic difference:
    /// `L` then `R` for SOAP, `m` for Muon, `h` for Sophia.
    SpectralLayerwise,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StateDistance {
    Frobenius(f64),
    SpectralLayerwise(Vec<f64>),
}

fn check_compatible(a: &PreconditionerState, b: &PreconditionerState) -> Result<()> {
    if a.variant() != b.variant() {
        return Err(Error::VariantMismatch(
            a.variant().to_string(),
            b.variant().to_string(),
        ));
    }
    let (sa, sb) = (a.layer_shapes(), b.layer_shapes());
    if sa != sb {
        return Err(shape_err(format!("{sa:?}"), format!("{sb:?}")));
    }
    Ok(())
}

/// Plain entrywise mean of every stored tensor; `steps` is the maximum.
/// Accumulated as offsets from the first state, so identical inputs average
/// to themselves exactly.
pub(crate) fn entrywise_mean(states: &[PreconditionerState]) -> Result<PreconditionerState> {
    let first = states.first().ok_or(Error::Empty("state list"))?;
    for s in &states[1..] {
        check_compatible(first, s)?;
    }
    let inv = 1.0 / states.len() as f64;
    let base = first.tensors();
    let mut offsets: Vec<Matrix> = base.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
    for s in &states[1..] {
        for ((acc, t), b) in offsets.iter_mut().zip(s.tensors()).zip(&base) {
            acc.axpy(1.0, &t.sub(b));
        }
    }
    let mut out = first.clone();
    for (o, acc) in out.tensors_mut().into_iter().zip(&offsets) {
        o.axpy(inv, acc);
    }
    out.steps = states.iter().map(|s| s.steps).max().unwrap_or(0);
    Ok(out)
}

/// Entrywise mean of client states.
///
/// SOAP eigenbases are not averaged directly (the mean of orthonormal
/// matrices is not orthonormal): each averaged `Q` is replaced by one
/// eigenvector refresh of the averaged factor, started from the mean of the
/// client bases. `steps` is the maximum over inputs.
pub fn state_average(states: &[PreconditionerState]) -> Result<PreconditionerState> {
    let mut out = entrywise_mean(states)?;
    if let LayerStates::Soap(layers) = &mut out.layers {
        for layer in layers.iter_mut() {
            layer.q_l = qr_eigenvectors(&layer.l, &layer.q_l)?;
            layer.q_r = qr_eigenvectors(&layer.r, &layer.q_r)?;
        }
    }
    Ok(out)
}

/// Distance between two states of the same variant and shapes.
pub fn state_distance(a: &PreconditionerState, b: &PreconditionerState, mode: DistanceMode) -> Result<StateDistance> {
    check_compatible(a, b)?;
    Ok(match mode {
        DistanceMode::Frobenius => StateDistance::Frobenius(
            a.tensors()
                .iter()
                .zip(b.tensors())
                .map(|(x, y)| x.sub(y).frobenius_sq())
                .sum(),
        ),
        DistanceMode::SpectralLayerwise => {
            let spec = |x: &Matrix, y: &Matrix| spectral_norm(&x.sub(y), DEFAULT_SPECTRAL_ITERS, DEFAULT_SPECTRAL_TOL);
            let values = match (&a.layers, &b.layers) {
                (LayerStates::Soap(la), LayerStates::Soap(lb)) => la
                    .iter()
                    .zip(lb)
                    .flat_map(|(x, y)| [spec(&x.l, &y.l), spec(&x.r, &y.r)])
                    .collect(),
                (LayerStates::Muon(la), LayerStates::Muon(lb)) => {
                    la.iter().zip(lb).map(|(x, y)| spec(&x.m, &y.m)).collect()
                }
                (LayerStates::Sophia(la), LayerStates::Sophia(lb)) => {
                    la.iter().zip(lb).map(|(x, y)| spec(&x.h, &y.h)).collect()
                }
                _ => unreachable!("variants checked above"),
            };
            StateDistance::SpectralLayerwise(values)
        }
    })
}

impl StateDistance {
    pub fn frobenius(&self) -> Option<f64> {
        match self {
            StateDistance::Frobenius(x) => Some(*x),
            _ => None,
        }
    }

    pub fn spectral(&self) -> Option<&[f64]> {
        match self {
            StateDistance::SpectralLayerwise(v) => Some(v),
            _ => None,
        }
    }
}
