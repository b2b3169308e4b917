use fedpac_core::datagen::{gen_classification, TaskSpec};
use fedpac_core::linalg::{Matrix, Rng};
use fedpac_core::models::{evaluate, hvp, loss, loss_grad, Batch, ModelSpec};
use fedpac_core::oracles::{centralized_descent, fd_gradient, fd_hvp, OracleReport};
use fedpac_core::params::ModelParams;
use proptest::prelude::*;

fn random_params(model: &ModelSpec, rng: &mut Rng, scale: f64) -> ModelParams {
    ModelParams::new(model.shapes().iter().map(|&(r, c)| rng.gaussian_matrix(r, c).scale(scale)).collect())
}

fn classification(model: &ModelSpec, n: usize, rng: &mut Rng) -> Batch {
    let (d, c) = (model.input_width(), model.n_classes().unwrap());
    gen_classification(c, d, n, 1, 2.0, rng).unwrap().0
}

fn flat(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().to_vec()).collect()
}

fn models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Quadratic { curvature: Matrix::from_rows(&[&[1.0, 3.0], &[0.5, 8.0], &[2.0, 1.5]]) },
        ModelSpec::Logistic { n_features: 4, n_classes: 3 },
        ModelSpec::Mlp { n_features: 4, hidden: 5, n_classes: 3 },
    ]
}

fn batch_for(model: &ModelSpec, rng: &mut Rng) -> Batch {
    match model {
        ModelSpec::Quadratic { curvature } => {
            Batch::new(rng.gaussian_matrix(7, curvature.len()), vec![0; 7]).unwrap()
        }
        _ => classification(model, 24, rng),
    }
}

/// Analytic gradients against central differences at 10 random points per
/// model, every coordinate (≥ 20 per model).
#[test]
fn gradients_match_finite_differences() {
    for model in models() {
        let mut rng = Rng::new(31);
        for point in 0..10 {
            let batch = batch_for(&model, &mut rng);
            let params = random_params(&model, &mut rng, 0.5);
            assert!(params.num_params() >= 6);
            let analytic = loss_grad(&model, &params, &batch).unwrap().grads;
            let fd = fd_gradient(&model, &params, &batch, 1e-6).unwrap();
            let r = OracleReport::compare("grad", analytic.flatten(), flat(&fd));
            assert!(r.passes(1e-9, 1e-5), "{model:?} point {point}: {r:?}");
        }
    }
}

#[test]
fn logistic_hvp_matches_finite_differences() {
    let model = ModelSpec::Logistic { n_features: 5, n_classes: 4 };
    let mut rng = Rng::new(12);
    for _ in 0..10 {
        let batch = classification(&model, 30, &mut rng);
        let params = random_params(&model, &mut rng, 0.3);
        let v = random_params(&model, &mut rng, 1.0);
        let exact = hvp(&model, &params, &batch, &v).unwrap();
        let fd = fd_hvp(&model, &params, &batch, &v, 1e-5).unwrap();
        let r = OracleReport::compare("hvp", exact.flatten(), flat(&fd));
        assert!(r.rel_err < 1e-4, "{r:?}");
    }
}

#[test]
fn mlp_hvp_matches_finite_differences() {
    let model = ModelSpec::Mlp { n_features: 3, hidden: 4, n_classes: 2 };
    let mut rng = Rng::new(13);
    let batch = classification(&model, 16, &mut rng);
    let params = random_params(&model, &mut rng, 0.5);
    let v = random_params(&model, &mut rng, 1.0);
    let got = hvp(&model, &params, &batch, &v).unwrap();
    let fd = fd_hvp(&model, &params, &batch, &v, 1e-5).unwrap();
    assert!(OracleReport::compare("mlp hvp", got.flatten(), flat(&fd)).rel_err < 1e-4);
}

#[test]
fn zero_weight_logistic_closed_form() {
    let model = ModelSpec::Logistic { n_features: 2, n_classes: 2 };
    let x = Matrix::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5], &[3.0, -1.0], &[0.0, 1.0]]);
    let labels = vec![0, 1, 1, 0];
    let batch = Batch::new(x.clone(), labels.clone()).unwrap();
    let params = ModelParams::zeros_like(&model.shapes());
    let r = loss_grad(&model, &params, &batch).unwrap();
    assert!((r.loss - 2f64.ln()).abs() < 1e-12);
    // ∂W[k] = mean_i (p_ik − y_ik) x_i with p = ½.
    for k in 0..2 {
        for f in 0..2 {
            let want: f64 = (0..4).map(|i| (0.5 - (labels[i] == k) as u8 as f64) * x.get(i, f)).sum::<f64>() / 4.0;
            assert!((r.grads.layers[0].get(k, f) - want).abs() < 1e-12);
        }
    }
    let (l, acc) = evaluate(&model, &params, &batch).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12);
    assert_eq!(acc, 0.5, "ties go to class 0");
}

#[test]
fn trained_logistic_separates_synthetic_data() {
    let spec = TaskSpec { n_classes: 2, n_features: 5, n_train: 400, n_test: 200, separation: 10.0, ..TaskSpec::default() };
    let task = spec.build(4, 3).unwrap();
    let x = centralized_descent(&task, 500, 0.5).unwrap();
    let (_, acc) = evaluate(&task.model, &x, &task.test_set).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn hvp_is_symmetric(seed in 0u64..100_000, which in 0usize..2) {
        let model = models().swap_remove(which);
        let mut rng = Rng::new(seed);
        let batch = batch_for(&model, &mut rng);
        let p = random_params(&model, &mut rng, 0.5);
        let u = random_params(&model, &mut rng, 1.0);
        let v = random_params(&model, &mut rng, 1.0);
        let uhv = u.dot(&hvp(&model, &p, &batch, &v).unwrap());
        let vhu = v.dot(&hvp(&model, &p, &batch, &u).unwrap());
        prop_assert!((uhv - vhu).abs() <= 1e-6 * uhv.abs().max(vhu.abs()).max(1e-12));
    }

    #[test]
    fn mean_loss_ignores_sample_order(seed in 0u64..100_000, which in 0usize..3) {
        let model = models().swap_remove(which);
        let mut rng = Rng::new(seed);
        let batch = batch_for(&model, &mut rng);
        let p = random_params(&model, &mut rng, 0.5);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        rng.shuffle(&mut order);
        let shuffled = batch.select(&order);
        let a = loss_grad(&model, &p, &batch).unwrap();
        let b = loss_grad(&model, &p, &shuffled).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        let r = OracleReport::compare("order", a.grads.flatten(), b.grads.flatten());
        prop_assert!(r.abs_err < 1e-12);
        prop_assert_eq!(loss(&model, &p, &batch).unwrap(), a.loss);
    }
}
