use fedpac_core::datagen::{ModelKind, TaskSpec};
use fedpac_core::federation::global_loss_grad;
use fedpac_core::linalg::{Matrix, Rng};
use fedpac_core::models::{loss_grad, Batch, ModelSpec};
use fedpac_core::oracles::{centralized_descent, fd_gradient, flat_drift, OracleReport};
use fedpac_core::params::ModelParams;
use fedpac_core::preconditioners::{OptimizerHyper, PreconditionerState, Variant};
use fedpac_core::Error;

fn flat(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().to_vec()).collect()
}

fn quad_task(noise: f64) -> fedpac_core::datagen::FederatedTask {
    TaskSpec {
        model: ModelKind::Quadratic,
        quad_rows: 3,
        quad_cols: 2,
        quad_condition: 4.0,
        quad_noise: noise,
        n_classes: 3,
        n_train: 60,
        n_test: 10,
        ..TaskSpec::default()
    }
    .build(3, 5)
    .unwrap()
}

#[test]
fn fd_gradient_on_quadratic_matches_analytic() {
    let model = ModelSpec::Quadratic { curvature: Matrix::from_rows(&[&[2.0, 6.0]]) };
    let batch = Batch::new(Matrix::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]), vec![0, 0]).unwrap();
    let x = ModelParams::new(vec![Matrix::from_rows(&[&[0.3, 0.7]])]);
    let fd = fd_gradient(&model, &x, &batch, 1e-4).unwrap();
    let analytic = loss_grad(&model, &x, &batch).unwrap().grads;
    assert!(OracleReport::compare("quad", flat(&fd), analytic.flatten()).abs_err < 1e-8);
}

#[test]
fn fd_gradient_mlp_is_stable_across_eps() {
    let model = ModelSpec::Mlp { n_features: 3, hidden: 4, n_classes: 2 };
    let mut rng = Rng::new(2);
    let x = model.init_params(&mut rng);
    let batch = Batch::new(rng.gaussian_matrix(10, 3), (0..10).map(|i| i % 2).collect()).unwrap();
    let a = fd_gradient(&model, &x, &batch, 1e-5).unwrap();
    let b = fd_gradient(&model, &x, &batch, 1e-6).unwrap();
    assert!(OracleReport::compare("eps", flat(&a), flat(&b)).rel_err < 1e-5);
    assert!(fd_gradient(&model, &x, &batch, 0.0).is_err());
}

#[test]
fn descent_on_quadratic_reaches_optimum() {
    let task = quad_task(0.0);
    // curvature ≤ 4, so lr = 0.3 < 2/L.
    let x = centralized_descent(&task, 400, 0.3).unwrap();
    let (_, g) = global_loss_grad(&task, &x).unwrap();
    assert!(g.norm() < 1e-8, "{}", g.norm());
}

#[test]
fn descent_on_separable_logistic() {
    let spec = TaskSpec { n_classes: 3, n_features: 6, n_train: 300, separation: 12.0, ..TaskSpec::default() };
    let task = spec.build(3, 1).unwrap();
    let x = centralized_descent(&task, 2000, 0.5).unwrap();
    let (f, _) = global_loss_grad(&task, &x).unwrap();
    assert!(f < 0.05, "loss {f}");
}

#[test]
fn descent_detects_divergence() {
    let task = quad_task(0.1);
    assert!(matches!(centralized_descent(&task, 500, 5.0), Err(Error::Divergence { .. })));
}

#[test]
fn flat_drift_of_identical_states_is_zero() {
    let st = PreconditionerState::zeros(Variant::Soap, &[(2, 3)], OptimizerHyper::soap());
    assert_eq!(flat_drift(&[st.clone(), st.clone(), st]), 0.0);
}

#[test]
fn reports_are_nonnegative() {
    let r = OracleReport::compare("x", vec![1.0, -2.0], vec![1.5, -2.0]);
    assert_eq!(r.abs_err, 0.5);
    assert_eq!(r.rel_err, 0.25);
    assert!(r.passes(0.5, 0.0) && !r.passes(0.1, 0.1));
}
