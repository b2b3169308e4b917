use super::{bias_scale, OptimizerHyper};
use crate::error::Result;
use crate::linalg::{qr_eigenvectors, Matrix};

/// Kronecker-factored statistics and rotated Adam moments for an m×n layer.
///
/// `l` (m×m) and `r` (n×n) are EMAs of `GGᵀ` and `GᵀG`; `q_l`, `q_r` are
/// their running eigenbasis estimates; `m` and `v` are first and second
/// moments of the rotated gradient `Q_Lᵀ G Q_R`. A bias vector is an n×1
/// layer, so its right factor is 1×1.
#[derive(Clone, Debug, PartialEq)]
pub struct SoapLayer {
    pub l: Matrix,
    pub r: Matrix,
    pub q_l: Matrix,
    pub q_r: Matrix,
    pub m: Matrix,
    pub v: Matrix,
}

impl SoapLayer {
    pub fn zeros((rows, cols): (usize, usize)) -> Self {
        Self {
            l: Matrix::zeros(rows, rows),
            r: Matrix::zeros(cols, cols),
            q_l: Matrix::identity(rows),
            q_r: Matrix::identity(cols),
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        }
    }
}

pub(super) fn update(layers: &mut [SoapLayer], grads: &[Matrix], hyper: &OptimizerHyper, step: u64) -> Result<()> {
    let refresh = step % hyper.precond_freq == 0;
    for (layer, g) in layers.iter_mut().zip(grads) {
        layer.l.ema(hyper.beta2, &g.matmul_t(g));
        layer.r.ema(hyper.beta2, &g.t_matmul(g));
        if refresh {
            layer.q_l = qr_eigenvectors(&layer.l, &layer.q_l)?;
            layer.q_r = qr_eigenvectors(&layer.r, &layer.q_r)?;
        }
        let rotated = layer.q_l.t_matmul(g).matmul(&layer.q_r);
        layer.m.ema(hyper.beta1, &rotated);
        layer.v.ema(hyper.beta2, &rotated.hadamard(&rotated));
    }
    Ok(())
}

pub(super) fn apply(layers: &[SoapLayer], hyper: &OptimizerHyper, steps: u64) -> Vec<Matrix> {
    let mscale = bias_scale(hyper.beta1, steps, hyper.bias_correction);
    let vscale = bias_scale(hyper.beta2, steps, hyper.bias_correction);
    layers
        .iter()
        .map(|l| {
            let n = l
                .m
                .zip_map(&l.v, |m, v| mscale * m / ((vscale * v).sqrt() + hyper.eps));
            l.q_l.matmul(&n).matmul_t(&l.q_r)
        })
        .collect()
}
