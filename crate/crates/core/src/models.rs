//! Desk-scale differentiable tasks with exact loss, gradient and
//! Hessian-vector oracles.
//!
//! * [`ModelSpec::Quadratic`]: `½ Σ_e H_e (x_e − c_e)²` averaged over sample
//!   centers `c`, with a fixed positive curvature `H` (elementwise).
//! * [`ModelSpec::Logistic`]: multinomial logistic regression, layers `[W, b]`.
//! * [`ModelSpec::Mlp`]: one tanh hidden layer, layers `[W1, b1, W2, b2]`.
//!
//! Classification losses are mean softmax cross-entropy. Gradients are
//! analytic; the HVP is exact for the quadratic and logistic models and a
//! central finite difference of gradients for the MLP.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::params::ModelParams;

/// Samples and integer labels. For the quadratic task each feature row is a
/// flattened center and the label only records which cluster it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(shape_err(
                format!("{} labels", features.rows()),
                format!("{}", labels.len()),
            ));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices` in the given order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Batch {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Batch {
            features: Matrix::new(indices.len(), cols, data).expect("row copy"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenation of several batches with the same feature width.
    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let first = parts.first().ok_or(Error::Empty("batch list"))?;
        let cols = first.features.cols();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.features.cols() != cols {
                return Err(shape_err(format!("{cols} features"), format!("{}", p.features.cols())));
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        Batch::new(Matrix::new(labels.len(), cols, data)?, labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Quadratic { curvature: Matrix },
    Logistic { n_features: usize, n_classes: usize },
    Mlp { n_features: usize, hidden: usize, n_classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradReport {
    pub loss: f64,
    pub grads: ModelParams,
    pub correct_count: usize,
}

impl ModelSpec {
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        match self {
            ModelSpec::Quadratic { curvature } => vec![curvature.shape()],
            ModelSpec::Logistic { n_features, n_classes } => {
                vec![(*n_classes, *n_features), (*n_classes, 1)]
            }
            ModelSpec::Mlp { n_features, hidden, n_classes } => vec![
                (*hidden, *n_features),
                (*hidden, 1),
                (*n_classes, *hidden),
                (*n_classes, 1),
            ],
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::Quadratic { .. })
    }

    /// Width of a feature row this model expects.
    pub fn input_width(&self) -> usize {
        match self {
            ModelSpec::Quadratic { curvature } => curvature.len(),
            ModelSpec::Logistic { n_features, .. } | ModelSpec::Mlp { n_features, .. } => *n_features,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::Logistic { n_classes, .. } | ModelSpec::Mlp { n_classes, .. } => Some(*n_classes),
        }
    }

    /// Zero init for the convex models, Xavier-uniform weights and zero biases
    /// for the MLP.
    pub fn init_params(&self, rng: &mut Rng) -> ModelParams {
        match self {
            ModelSpec::Mlp { .. } => {
                let layers = self
                    .shapes()
                    .into_iter()
                    .map(|(r, c)| {
                        if c == 1 {
                            Matrix::zeros(r, c)
                        } else {
                            let limit = (6.0 / (r + c) as f64).sqrt();
                            Matrix::from_fn(r, c, |_, _| limit * (2.0 * rng.uniform() - 1.0))
                        }
                    })
                    .collect();
                ModelParams::new(layers)
            }
            _ => ModelParams::zeros_like(&self.shapes()),
        }
    }

    fn check(&self, params: &ModelParams, batch: &Batch) -> Result<()> {
        params.check_shapes(&self.shapes())?;
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if batch.features.cols() != self.input_width() {
            return Err(shape_err(
                format!("{} input columns", self.input_width()),
                format!("{}", batch.features.cols()),
            ));
        }
        if let Some(c) = self.n_classes() {
            if let Some(&bad) = batch.labels.iter().find(|&&l| l >= c) {
                return Err(shape_err(format!("labels < {c}"), format!("label {bad}")));
            }
        }
        Ok(())
    }
}

/// Mean loss, exact gradient and correct-prediction count on `batch`.
pub fn loss_grad(model: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<LossGradReport> {
    model.check(params, batch)?;
    Ok(match model {
        ModelSpec::Quadratic { curvature } => quadratic_loss_grad(curvature, params, batch),
        ModelSpec::Logistic { .. } => logistic_loss_grad(params, batch),
        ModelSpec::Mlp { .. } => mlp_loss_grad(params, batch),
    })
}

/// Mean loss only.
pub fn loss(model: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<f64> {
    loss_grad(model, params, batch).map(|r| r.loss)
}

/// Hessian of the mean loss applied to `v`.
pub fn hvp(model: &ModelSpec, params: &ModelParams, batch: &Batch, v: &ModelParams) -> Result<ModelParams> {
    model.check(params, batch)?;
    v.check_shapes(&model.shapes())?;
    match model {
        ModelSpec::Quadratic { curvature } => Ok(ModelParams::new(vec![curvature.hadamard(&v.layers[0])])),
        ModelSpec::Logistic { .. } => Ok(logistic_hvp(params, batch, v)),
        ModelSpec::Mlp { .. } => {
            let vnorm = v.norm();
            if vnorm == 0.0 {
                return Ok(ModelParams::zeros_like(&model.shapes()));
            }
            let t = 1e-4 * (1.0 + params.norm()) / vnorm;
            let mut plus = params.clone();
            plus.axpy(t, v);
            let mut minus = params.clone();
            minus.axpy(-t, v);
            let gp = mlp_loss_grad(&plus, batch).grads;
            let gm = mlp_loss_grad(&minus, batch).grads;
            Ok(gp.sub(&gm).scale(0.5 / t))
        }
    }
}

/// Full-dataset mean loss and top-1 accuracy (ties resolve to the lowest
/// class index). Accuracy is reported as 0 for the quadratic task.
pub fn evaluate(model: &ModelSpec, params: &ModelParams, dataset: &Batch) -> Result<(f64, f64)> {
    let r = loss_grad(model, params, dataset)?;
    let acc = if model.is_classifier() {
        r.correct_count as f64 / dataset.len() as f64
    } else {
        0.0
    };
    Ok((r.loss, acc))
}

fn quadratic_loss_grad(curvature: &Matrix, params: &ModelParams, batch: &Batch) -> LossGradReport {
    let x = params.layers[0].data();
    let h = curvature.data();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut mean_center = vec![0.0; x.len()];
    for j in 0..batch.len() {
        let c = batch.features.row(j);
        for e in 0..x.len() {
            let d = x[e] - c[e];
            loss += 0.5 * h[e] * d * d;
            mean_center[e] += c[e];
        }
    }
    let grad: Vec<f64> = (0..x.len())
        .map(|e| h[e] * (x[e] - mean_center[e] / n))
        .collect();
    let (r, c) = curvature.shape();
    LossGradReport {
        loss: loss / n,
        grads: ModelParams::new(vec![Matrix::new(r, c, grad).expect("shape")]),
        correct_count: 0,
    }
}

/// Numerically stable softmax; returns probabilities and log-sum-exp.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut z = w.matvec(x);
    for (zi, bi) in z.iter_mut().zip(b.data()) {
        *zi += bi;
    }
    z
}

fn logistic_loss_grad(params: &ModelParams, batch: &Batch) -> LossGradReport {
    let (w, b) = (&params.layers[0], &params.layers[1]);
    let (c, d) = w.shape();
    let n = batch.len() as f64;
    let mut gw = Matrix::zeros(c, d);
    let mut gb = Matrix::zeros(c, 1);
    let mut loss = 0.0;
    let mut correct = 0;
    for j in 0..batch.len() {
        let x = batch.features.row(j);
        let y = batch.labels[j];
        let z = affine(w, b, x);
        let (p, lse) = softmax(&z);
        loss += lse - z[y];
        if argmax(&z) == y {
            correct += 1;
        }
        for k in 0..c {
            let delta = p[k] - if k == y { 1.0 } else { 0.0 };
            gb.data_mut()[k] += delta;
            let row = &mut gw.data_mut()[k * d..(k + 1) * d];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    LossGradReport {
        loss: loss / n,
        grads: ModelParams::new(vec![gw.scale(1.0 / n), gb.scale(1.0 / n)]),
        correct_count: correct,
    }
}

fn logistic_hvp(params: &ModelParams, batch: &Batch, v: &ModelParams) -> ModelParams {
    let (w, b) = (&params.layers[0], &params.layers[1]);
    let (vw, vb) = (&v.layers[0], &v.layers[1]);
    let (c, d) = w.shape();
    let n = batch.len() as f64;
    let mut hw = Matrix::zeros(c, d);
    let mut hb = Matrix::zeros(c, 1);
    for j in 0..batch.len() {
        let x = batch.features.row(j);
        let (p, _) = softmax(&affine(w, b, x));
        let dz = affine(vw, vb, x);
        let pdz: f64 = p.iter().zip(&dz).map(|(a, b)| a * b).sum();
        for k in 0..c {
            let dp = p[k] * (dz[k] - pdz);
            hb.data_mut()[k] += dp;
            let row = &mut hw.data_mut()[k * d..(k + 1) * d];
            for (h, &xi) in row.iter_mut().zip(x) {
                *h += dp * xi;
            }
        }
    }
    ModelParams::new(vec![hw.scale(1.0 / n), hb.scale(1.0 / n)])
}

fn mlp_loss_grad(params: &ModelParams, batch: &Batch) -> LossGradReport {
    let (w1, b1, w2, b2) = (
        &params.layers[0],
        &params.layers[1],
        &params.layers[2],
        &params.layers[3],
    );
    let (h_dim, d) = w1.shape();
    let c = w2.rows();
    let n = batch.len() as f64;
    let mut gw1 = Matrix::zeros(h_dim, d);
    let mut gb1 = Matrix::zeros(h_dim, 1);
    let mut gw2 = Matrix::zeros(c, h_dim);
    let mut gb2 = Matrix::zeros(c, 1);
    let mut loss = 0.0;
    let mut correct = 0;
    for j in 0..batch.len() {
        let x = batch.features.row(j);
        let y = batch.labels[j];
        let hidden: Vec<f64> = affine(w1, b1, x).into_iter().map(f64::tanh).collect();
        let z = affine(w2, b2, &hidden);
        let (p, lse) = softmax(&z);
        loss += lse - z[y];
        if argmax(&z) == y {
            correct += 1;
        }
        let delta2: Vec<f64> = (0..c)
            .map(|k| p[k] - if k == y { 1.0 } else { 0.0 })
            .collect();
        for k in 0..c {
            gb2.data_mut()[k] += delta2[k];
            let row = &mut gw2.data_mut()[k * h_dim..(k + 1) * h_dim];
            for (g, &hv) in row.iter_mut().zip(&hidden) {
                *g += delta2[k] * hv;
            }
        }
        let back = w2.t_matvec(&delta2);
        for u in 0..h_dim {
            let delta1 = back[u] * (1.0 - hidden[u] * hidden[u]);
            gb1.data_mut()[u] += delta1;
            let row = &mut gw1.data_mut()[u * d..(u + 1) * d];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += delta1 * xi;
            }
        }
    }
    let s = 1.0 / n;
    LossGradReport {
        loss: loss * s,
        grads: ModelParams::new(vec![gw1.scale(s), gb1.scale(s), gw2.scale(s), gb2.scale(s)]),
        correct_count: correct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(diag: &[f64]) -> ModelSpec {
        ModelSpec::Quadratic {
            curvature: Matrix::column(diag),
        }
    }

    #[test]
    fn quadratic_at_its_center() {
        let model = quad(&[1.0, 1.0, 1.0]);
        let batch = Batch::new(Matrix::zeros(2, 3), vec![0, 0]).unwrap();
        let params = ModelParams::zeros_like(&model.shapes());
        let r = loss_grad(&model, &params, &batch).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.grads.norm(), 0.0);
    }

    #[test]
    fn quadratic_hvp_is_curvature() {
        let model = quad(&[2.0, 6.0]);
        let batch = Batch::new(Matrix::zeros(1, 2), vec![0]).unwrap();
        let params = ModelParams::zeros_like(&model.shapes());
        let v = ModelParams::new(vec![Matrix::column(&[1.0, 0.0])]);
        let hv = hvp(&model, &params, &batch, &v).unwrap();
        assert_eq!(hv.layers[0].data(), &[2.0, 0.0]);
        let zero = ModelParams::zeros_like(&model.shapes());
        assert_eq!(hvp(&model, &params, &batch, &zero).unwrap().norm(), 0.0);
    }

    #[test]
    fn logistic_uniform_start() {
        let model = ModelSpec::Logistic {
            n_features: 2,
            n_classes: 2,
        };
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let batch = Batch::new(x.clone(), vec![0, 1]).unwrap();
        let params = ModelParams::zeros_like(&model.shapes());
        let r = loss_grad(&model, &params, &batch).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-15);
        // grad_W[k] = mean_j (½ − y_jk) x_j
        let expect_w0 = (0.5 - 1.0) * 1.0 / 2.0 + (0.5 - 0.0) * -1.0 / 2.0;
        assert!((r.grads.layers[0].get(0, 0) - expect_w0).abs() < 1e-15);
        assert!(r.grads.layers[1].get(0, 0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_tie_break_lowest_index() {
        let model = ModelSpec::Logistic {
            n_features: 1,
            n_classes: 2,
        };
        let batch = Batch::new(Matrix::column(&[1.0, -1.0, 2.0, 3.0]), vec![0, 1, 0, 1]).unwrap();
        let params = ModelParams::zeros_like(&model.shapes());
        let (loss, acc) = evaluate(&model, &params, &batch).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn perfect_margin_classifier() {
        let model = ModelSpec::Logistic {
            n_features: 1,
            n_classes: 2,
        };
        let batch = Batch::new(Matrix::column(&[-3.0, -2.0, 2.0, 4.0]), vec![0, 0, 1, 1]).unwrap();
        let params = ModelParams::new(vec![
            Matrix::column(&[-5.0, 5.0]),
            Matrix::column(&[0.0, 0.0]),
        ]);
        let (_, acc) = evaluate(&model, &params, &batch).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn shape_errors() {
        let model = ModelSpec::Logistic {
            n_features: 3,
            n_classes: 2,
        };
        let params = ModelParams::zeros_like(&model.shapes());
        let wrong_width = Batch::new(Matrix::zeros(1, 2), vec![0]).unwrap();
        assert!(loss_grad(&model, &params, &wrong_width).is_err());
        let bad_label = Batch::new(Matrix::zeros(1, 3), vec![5]).unwrap();
        assert!(loss_grad(&model, &params, &bad_label).is_err());
        let wrong_params = ModelParams::zeros_like(&[(2, 2)]);
        let ok = Batch::new(Matrix::zeros(1, 3), vec![1]).unwrap();
        assert!(loss_grad(&model, &wrong_params, &ok).is_err());
        assert!(Batch::new(Matrix::zeros(2, 3), vec![0]).is_err());
    }

    #[test]
    fn mean_loss_is_order_invariant() {
        let model = ModelSpec::Mlp {
            n_features: 3,
            hidden: 4,
            n_classes: 3,
        };
        let mut rng = Rng::new(2);
        let params = model.init_params(&mut rng);
        let batch = Batch::new(rng.gaussian_matrix(6, 3), vec![0, 1, 2, 2, 1, 0]).unwrap();
        let reversed = batch.select(&[5, 4, 3, 2, 1, 0]);
        let a = loss_grad(&model, &params, &batch).unwrap();
        let b = loss_grad(&model, &params, &reversed).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-14);
        assert!(a.grads.sub(&b.grads).norm() < 1e-14);
        // deterministic
        assert_eq!(a, loss_grad(&model, &params, &batch).unwrap());
    }
}
