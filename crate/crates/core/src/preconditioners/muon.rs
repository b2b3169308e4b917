use super::OptimizerHyper;
use crate::error::Result;
use crate::linalg::{newton_schulz, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct MuonLayer {
    pub m: Matrix,
}

impl MuonLayer {
    pub fn zeros((r, c): (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(r, c),
        }
    }
}

pub(super) fn update(layers: &mut [MuonLayer], grads: &[Matrix], hyper: &OptimizerHyper) {
    for (layer, g) in layers.iter_mut().zip(grads) {
        layer.m.ema(hyper.beta1, g);
    }
}

pub(super) fn apply(layers: &[MuonLayer], hyper: &OptimizerHyper) -> Result<Vec<Matrix>> {
    layers
        .iter()
        .map(|l| {
            // Vectors (biases) fall back to momentum SGD.
            if l.m.is_vector() {
                return Ok(l.m.clone());
            }
            if l.m.frobenius_norm() == 0.0 {
                return Ok(Matrix::zeros(l.m.rows(), l.m.cols()));
            }
            let u = newton_schulz(&l.m, hyper.ns_steps, hyper.eps, hyper.ns_variant)?;
            let gamma = if hyper.dim_scaling {
                (l.m.rows() as f64 / l.m.cols() as f64).sqrt()
            } else {
                1.0
            };
            Ok(u.scale(gamma))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::linalg::{Matrix, NsVariant, Rng};
    use crate::preconditioners::{LayerStates, OptimizerHyper, PreconditionerState, Variant};

    #[test]
    fn momentum_off_copies_gradient() {
        let hyper = OptimizerHyper {
            beta1: 0.0,
            ..OptimizerHyper::muon()
        };
        let g = Matrix::from_rows(&[&[1.5, -2.0], &[0.25, 4.0]]);
        let st = PreconditionerState::zeros(Variant::Muon, &[(2, 2)], hyper)
            .update_state(std::slice::from_ref(&g), None, &mut Rng::new(0))
            .unwrap();
        let LayerStates::Muon(layers) = &st.layers else { unreachable!() };
        assert_eq!(layers[0].m, g);
    }

    #[test]
    fn diagonal_gradient_orthogonalizes_to_identity() {
        let hyper = OptimizerHyper {
            beta1: 0.0,
            ns_variant: NsVariant::Classic,
            ..OptimizerHyper::muon()
        };
        let g = Matrix::from_diag(&[3.0, 1.0]);
        let st = PreconditionerState::zeros(Variant::Muon, &[(2, 2)], hyper)
            .update_state(std::slice::from_ref(&g), None, &mut Rng::new(0))
            .unwrap();
        let out = st.apply_precond(&[g]).unwrap();
        assert!(out[0].sub(&Matrix::identity(2)).max_abs() < 1e-2);
    }

    #[test]
    fn bias_layers_use_plain_momentum() {
        let hyper = OptimizerHyper {
            beta1: 0.5,
            ..OptimizerHyper::muon()
        };
        let g = Matrix::column(&[2.0, -4.0]);
        let st = PreconditionerState::zeros(Variant::Muon, &[(2, 1)], hyper)
            .update_state(std::slice::from_ref(&g), None, &mut Rng::new(0))
            .unwrap();
        assert_eq!(st.apply_precond(&[g]).unwrap()[0].data(), &[1.0, -2.0]);
    }
}
