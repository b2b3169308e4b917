use fedpac_core::linalg::{Matrix, NsVariant, Rng};
use fedpac_core::oracles::{flat_state, polar_factor, to_dense};
use fedpac_core::preconditioners::{
    compress_state, decompress_state, state_average, state_distance, DistanceMode, LayerStates, OptimizerHyper,
    PreconditionerState, Variant,
};
use proptest::prelude::*;

const SHAPES: [(usize, usize); 3] = [(4, 3), (3, 1), (2, 5)];

/// HVP of a fixed quadratic with positive diagonal curvature `1 + layer`.
fn diag_hvp(u: &[Matrix]) -> fedpac_core::Result<Vec<Matrix>> {
    Ok(u.iter().enumerate().map(|(i, m)| m.scale(1.0 + i as f64)).collect())
}

fn grads(rng: &mut Rng, scale: f64) -> Vec<Matrix> {
    SHAPES.iter().map(|&(r, c)| rng.gaussian_matrix(r, c).scale(scale)).collect()
}

/// A state after a few random steps, so that every tensor carries history.
fn random_state(variant: Variant, hyper: OptimizerHyper, rng: &mut Rng) -> PreconditionerState {
    let mut st = PreconditionerState::zeros(variant, &SHAPES, hyper);
    let steps = 1 + rng.below(4);
    for _ in 0..steps {
        let scale = (rng.normal() * 2.0).exp();
        let g = grads(rng, scale);
        st = st.update_state(&g, Some(&diag_hvp), rng).unwrap();
    }
    st
}

fn inner(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &[Matrix]) -> f64 {
    inner(a, a).sqrt()
}

#[test]
fn hutchinson_is_unbiased_within_three_se() {
    // Off-diagonal coupling makes single draws noisy: u ⊙ Hu = (2 ± 1, 6 ± 1).
    let h = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 6.0]]);
    let hvp = |u: &[Matrix]| -> fedpac_core::Result<Vec<Matrix>> { Ok(vec![h.matmul(&u[0])]) };
    let hyper = OptimizerHyper {
        beta2: 0.0,
        hessian_freq: 1,
        ..OptimizerHyper::sophia()
    };
    let mut rng = Rng::new(2024);
    let n = 10_000;
    let mut samples = vec![Vec::with_capacity(n); 2];
    let mut st = PreconditionerState::zeros(Variant::Sophia, &[(2, 1)], hyper);
    for _ in 0..n {
        st = st.update_state(&[Matrix::column(&[0.1, 0.1])], Some(&hvp), &mut rng).unwrap();
        let LayerStates::Sophia(layers) = &st.layers else { unreachable!() };
        for (e, s) in samples.iter_mut().enumerate() {
            s.push(layers[0].h.data()[e]);
        }
    }
    for (s, want) in samples.iter().zip([2.0, 6.0]) {
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(se > 0.0);
        assert!((mean - want).abs() <= 3.0 * se, "mean {mean} want {want} se {se}");
    }
}

#[test]
fn hutchinson_diag_quadratic_is_exact() {
    let hvp = |u: &[Matrix]| -> fedpac_core::Result<Vec<Matrix>> {
        Ok(vec![u[0].hadamard(&Matrix::column(&[2.0, 6.0]))])
    };
    let hyper = OptimizerHyper {
        beta2: 0.0,
        ..OptimizerHyper::sophia()
    };
    let st = PreconditionerState::zeros(Variant::Sophia, &[(2, 1)], hyper)
        .update_state(&[Matrix::column(&[1.0, 1.0])], Some(&hvp), &mut Rng::new(1))
        .unwrap();
    let LayerStates::Sophia(layers) = &st.layers else { unreachable!() };
    assert_eq!(layers[0].h.data(), &[2.0, 6.0]);
}

#[test]
fn muon_matches_polar_oracle() {
    let hyper = OptimizerHyper {
        beta1: 0.0,
        ns_steps: 30,
        ns_variant: NsVariant::Classic,
        ..OptimizerHyper::muon()
    };
    let mut rng = Rng::new(9);
    let g = rng.gaussian_matrix(6, 3);
    let st = PreconditionerState::zeros(Variant::Muon, &[(6, 3)], hyper)
        .update_state(std::slice::from_ref(&g), None, &mut rng)
        .unwrap();
    let out = st.apply_precond(std::slice::from_ref(&g)).unwrap();
    let polar = polar_factor(&to_dense(&g));
    let gamma = 2f64.sqrt();
    for i in 0..6 {
        for j in 0..3 {
            assert!((out[0].get(i, j) - gamma * polar[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn soap_average_of_axis_factors() {
    let mut a = PreconditionerState::zeros(Variant::Soap, &[(2, 2)], OptimizerHyper::soap());
    let mut b = a.clone();
    let (LayerStates::Soap(la), LayerStates::Soap(lb)) = (&mut a.layers, &mut b.layers) else { unreachable!() };
    la[0].l = Matrix::from_diag(&[1.0, 0.0]);
    lb[0].l = Matrix::from_diag(&[0.0, 1.0]);
    let avg = state_average(&[a, b]).unwrap();
    let LayerStates::Soap(l) = &avg.layers else { unreachable!() };
    assert!(l[0].l.sub(&Matrix::from_diag(&[0.5, 0.5])).max_abs() < 1e-15);
    let q = &l[0].q_l;
    assert!(q.t_matmul(q).sub(&Matrix::identity(2)).max_abs() < 1e-12);
    let d = q.t_matmul(&l[0].l.matmul(q));
    assert!(d.get(0, 1).abs() < 1e-12);
}

#[test]
fn compressed_roundtrip_full_rank_is_exact() {
    let mut rng = Rng::new(5);
    for v in Variant::ALL {
        let st = random_state(v, v.default_hyper(), &mut rng);
        let (c, _) = compress_state(&st, 1.0).unwrap();
        let back = decompress_state(&c).unwrap();
        let err = flat_state(&st)
            .iter()
            .zip(flat_state(&back))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{v}: {err}");
    }
}

/// Assumption checks over 1 000 random (state, g) pairs per variant: the
/// preconditioned direction is bounded by a finite multiple of ‖g‖ and, with
/// momentum off, positively aligned with g.
#[test]
fn boundedness_and_positivity_1000_draws() {
    for v in Variant::ALL {
        let hyper = OptimizerHyper {
            beta1: 0.0,
            precond_freq: 2,
            hessian_freq: 2,
            ..v.default_hyper()
        };
        let mut rng = Rng::new(77 + v as u64);
        let mut max_ratio: f64 = 0.0;
        let mut violations = 0;
        for _ in 0..1000 {
            let st = random_state(v, hyper, &mut rng);
            let scale = rng.normal().exp();
            let g = grads(&mut rng, scale);
            let st = st.update_state(&g, Some(&diag_hvp), &mut rng).unwrap();
            let p = st.apply_precond(&g).unwrap();
            assert!(p.iter().all(Matrix::is_finite));
            let ratio = norm(&p) / norm(&g);
            max_ratio = max_ratio.max(ratio);
            if v == Variant::Sophia {
                let entries: usize = SHAPES.iter().map(|&(r, c)| r * c).sum();
                assert!(norm(&p) <= hyper.clip_rho * (entries as f64).sqrt() + 1e-12);
            }
            if inner(&g, &p) <= 0.0 {
                violations += 1;
            }
        }
        assert!(max_ratio.is_finite(), "{v}: M = {max_ratio}");
        assert_eq!(violations, 0, "{v}");
    }
}

fn arb_states() -> impl Strategy<Value = (Variant, Vec<u64>)> {
    (0usize..3, proptest::collection::vec(0u64..1_000_000, 1..5)).prop_map(|(v, seeds)| (Variant::ALL[v], seeds))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn average_is_permutation_invariant_and_idempotent((v, seeds) in arb_states()) {
        let states: Vec<_> = seeds.iter().map(|&s| random_state(v, v.default_hyper(), &mut Rng::new(s))).collect();
        let mut reversed = states.clone();
        reversed.reverse();
        let a = state_average(&states).unwrap();
        let b = state_average(&reversed).unwrap();
        let err = flat_state(&a).iter().zip(flat_state(&b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
        let same = state_average(&[states[0].clone(), states[0].clone()]).unwrap();
        let once = state_average(&states[..1]).unwrap();
        prop_assert!(flat_state(&same).iter().zip(flat_state(&once)).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn distance_is_a_symmetric_premetric(v in 0usize..3, s1 in 0u64..1_000_000, s2 in 0u64..1_000_000) {
        let v = Variant::ALL[v];
        let a = random_state(v, v.default_hyper(), &mut Rng::new(s1));
        let b = random_state(v, v.default_hyper(), &mut Rng::new(s2 ^ 0xABCD));
        let ab = state_distance(&a, &b, DistanceMode::Frobenius).unwrap().frobenius().unwrap();
        let ba = state_distance(&b, &a, DistanceMode::Frobenius).unwrap().frobenius().unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab > 0.0);
        prop_assert_eq!(state_distance(&a, &a, DistanceMode::Frobenius).unwrap().frobenius().unwrap(), 0.0);
        let oracle: f64 = flat_state(&a).iter().zip(flat_state(&b)).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert!((ab - oracle).abs() <= 1e-10 * oracle.max(1.0));
        let spec = state_distance(&a, &b, DistanceMode::SpectralLayerwise).unwrap();
        prop_assert!(spec.spectral().unwrap().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn apply_reads_the_state_just_updated(v in 0usize..3, seed in 0u64..1_000_000) {
        let v = Variant::ALL[v];
        let mut rng = Rng::new(seed);
        let st = random_state(v, v.default_hyper(), &mut rng);
        let g = grads(&mut rng, 1.0);
        let mut r1 = Rng::new(seed + 1);
        let updated = st.clone().update_state(&g, Some(&diag_hvp), &mut r1).unwrap();
        prop_assert_eq!(updated.steps, st.steps + 1);
        let p = updated.apply_precond(&g).unwrap();
        let mut r2 = Rng::new(seed + 1);
        let again = st.update_state(&g, Some(&diag_hvp), &mut r2).unwrap().apply_precond(&g).unwrap();
        prop_assert_eq!(p, again);
    }
}
