use super::{LayerStates, OptimizerHyper, PreconditionerState, Variant};
use crate::error::{Error, Result};
use crate::linalg::{truncated_svd, Svd};

/// Low-rank upload form of a state: every tensor replaced by truncated SVD
/// factors.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedState {
    pub variant: Variant,
    pub hyper: OptimizerHyper,
    pub steps: u64,
    pub layer_shapes: Vec<(usize, usize)>,
    pub factors: Vec<Svd>,
}

impl CompressedState {
    /// Transmitted floats: `U`, `s` and `V` of every factor.
    pub fn num_floats(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.u.len() + f.s.len() + f.v.len())
            .sum()
    }

    pub fn bytes(&self) -> usize {
        8 * self.num_floats()
    }
}

pub fn rank_for(shape: (usize, usize), rank_fraction: f64) -> usize {
    let k = shape.0.min(shape.1);
    ((rank_fraction * k as f64).ceil() as usize).clamp(1, k)
}

/// Floats transmitted for tensors of the given shapes at `rank_fraction`,
/// without performing the decomposition.
pub fn compressed_floats(shapes: &[(usize, usize)], rank_fraction: f64) -> usize {
    shapes
        .iter()
        .map(|&(r, c)| {
            let k = rank_for((r, c), rank_fraction);
            r * k + k + c * k
        })
        .sum()
}

/// Truncated-SVD compression at rank `⌈rank_fraction·min(m,n)⌉` per tensor.
/// Returns the compressed state and its upload size in bytes.
pub fn compress_state(state: &PreconditionerState, rank_fraction: f64) -> Result<(CompressedState, usize)> {
    if !(rank_fraction > 0.0 && rank_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank_fraction {rank_fraction} outside (0, 1]"
        )));
    }
    let factors = state
        .tensors()
        .into_iter()
        .map(|t| truncated_svd(t, rank_for(t.shape(), rank_fraction)))
        .collect::<Result<Vec<_>>>()?;
    let c = CompressedState {
        variant: state.variant(),
        hyper: state.hyper,
        steps: state.steps,
        layer_shapes: state.layer_shapes(),
        factors,
    };
    let bytes = c.bytes();
    Ok((c, bytes))
}

/// Rebuilds a dense state from low-rank factors. Nonnegative tensors (`h`,
/// `V`) are clamped at zero and Kronecker factors are symmetrized, since
/// low-rank reconstruction only preserves those properties approximately.
pub fn decompress_state(c: &CompressedState) -> Result<PreconditionerState> {
    let mut state = PreconditionerState::zeros(c.variant, &c.layer_shapes, c.hyper);
    state.steps = c.steps;
    {
        let tensors = state.tensors_mut();
        if tensors.len() != c.factors.len() {
            return Err(Error::Format(format!(
                "{} factors for {} tensors",
                c.factors.len(),
                tensors.len()
            )));
        }
        for (t, f) in tensors.into_iter().zip(&c.factors) {
            let dense = f.reconstruct();
            t.check_same_shape(&dense)?;
            *t = dense;
        }
    }
    match &mut state.layers {
        LayerStates::Sophia(layers) => {
            for l in layers {
                l.h = l.h.map(|x| x.max(0.0));
            }
        }
        LayerStates::Soap(layers) => {
            for l in layers {
                l.v = l.v.map(|x| x.max(0.0));
                l.l = l.l.symmetrize();
                l.r = l.r.symmetrize();
            }
        }
        LayerStates::Muon(_) => {}
    }
    Ok(state)
}
