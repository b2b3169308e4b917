use super::{bias_scale, HvpFn, OptimizerHyper};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Rng};

/// Momentum and diagonal-Hessian EMA for one layer. `h ≥ 0` entrywise.
#[derive(Clone, Debug, PartialEq)]
pub struct SophiaLayer {
    pub m: Matrix,
    pub h: Matrix,
}

impl SophiaLayer {
    pub fn zeros((r, c): (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(r, c),
            h: Matrix::zeros(r, c),
        }
    }
}

pub(super) fn update(
    layers: &mut [SophiaLayer],
    grads: &[Matrix],
    hyper: &OptimizerHyper,
    step: u64,
    hvp: Option<&HvpFn<'_>>,
    rng: &mut Rng,
) -> Result<()> {
    for (layer, g) in layers.iter_mut().zip(grads) {
        layer.m.ema(hyper.beta1, g);
    }
    if step % hyper.hessian_freq != 0 {
        return Ok(());
    }
    let hvp = hvp.ok_or(Error::MissingHvp(step))?;
    // Hutchinson: u ⊙ (H u) with Rademacher u is unbiased for diag(H).
    let probes: Vec<Matrix> = layers
        .iter()
        .map(|l| rng.rademacher_matrix(l.m.rows(), l.m.cols()))
        .collect();
    let hv = hvp(&probes)?;
    if hv.len() != probes.len() {
        return Err(shape_err(format!("{} HVP layers", probes.len()), format!("{}", hv.len())));
    }
    for ((layer, u), hu) in layers.iter_mut().zip(&probes).zip(&hv) {
        u.check_same_shape(hu)?;
        let estimate = u.hadamard(hu).map(|x| x.max(0.0));
        layer.h.ema(hyper.beta2, &estimate);
    }
    Ok(())
}

pub(super) fn apply(layers: &[SophiaLayer], hyper: &OptimizerHyper, steps: u64) -> Vec<Matrix> {
    let mscale = bias_scale(hyper.beta1, steps, hyper.bias_correction);
    let rho = hyper.clip_rho;
    layers
        .iter()
        .map(|l| {
            l.m.zip_map(&l.h, |m, h| (mscale * m / (h + hyper.eps)).clamp(-rho, rho))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::linalg::{Matrix, Rng};
    use crate::preconditioners::{LayerStates, OptimizerHyper, PreconditionerState, Variant};

    #[test]
    fn clipping_saturates_on_zero_curvature() {
        let hyper = OptimizerHyper {
            eps: 1e-12,
            clip_rho: 1.0,
            ..OptimizerHyper::sophia()
        };
        let mut st = PreconditionerState::zeros(Variant::Sophia, &[(2, 1)], hyper);
        if let LayerStates::Sophia(layers) = &mut st.layers {
            layers[0].m = Matrix::column(&[10.0, -10.0]);
        }
        st.steps = 1;
        let out = st.apply_precond(&[Matrix::zeros(2, 1)]).unwrap();
        assert_eq!(out[0].data(), &[1.0, -1.0]);
    }

    #[test]
    fn missing_hvp_at_refresh_step() {
        let st = PreconditionerState::zeros(Variant::Sophia, &[(2, 1)], OptimizerHyper::sophia());
        let mut rng = Rng::new(0);
        let err = st.update_state(&[Matrix::column(&[1.0, 1.0])], None, &mut rng);
        assert!(matches!(err, Err(crate::Error::MissingHvp(0))));
    }

    #[test]
    fn no_hvp_needed_between_refreshes() {
        let hyper = OptimizerHyper {
            hessian_freq: 3,
            ..OptimizerHyper::sophia()
        };
        let mut st = PreconditionerState::zeros(Variant::Sophia, &[(1, 1)], hyper);
        st.steps = 1;
        let mut rng = Rng::new(0);
        assert!(st.update_state(&[Matrix::column(&[1.0])], None, &mut rng).is_ok());
    }

    #[test]
    fn curvature_stays_nonnegative() {
        // HVP of a negative-definite quadratic: every estimate is clipped at 0.
        let st = PreconditionerState::zeros(Variant::Sophia, &[(3, 1)], OptimizerHyper::sophia());
        let mut rng = Rng::new(4);
        let hvp = |v: &[Matrix]| -> crate::Result<Vec<Matrix>> { Ok(vec![v[0].scale(-2.0)]) };
        let st = st
            .update_state(&[Matrix::column(&[1.0, 2.0, 3.0])], Some(&hvp), &mut rng)
            .unwrap();
        if let LayerStates::Sophia(layers) = &st.layers {
            assert!(layers[0].h.data().iter().all(|&x| x == 0.0));
        }
    }
}
