//! Brute-force references for tests. Everything here works on plain
//! `Vec<Vec<f64>>` and owns its arithmetic so that it shares no code path
//! with the kernels it checks. Intended for dimensions ≤ 64.

use crate::datagen::FederatedTask;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{loss, loss_grad, Batch, ModelSpec};
use crate::params::ModelParams;
use crate::preconditioners::PreconditionerState;

pub type Dense = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub computed: Vec<f64>,
    pub reference: Vec<f64>,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl OracleReport {
    /// Max absolute error and that error relative to `max |reference|`.
    pub fn compare(name: impl Into<String>, computed: Vec<f64>, reference: Vec<f64>) -> Self {
        assert_eq!(computed.len(), reference.len(), "oracle length mismatch");
        let abs_err = computed
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let rel_err = if scale > 0.0 { abs_err / scale } else { abs_err };
        Self {
            name: name.into(),
            computed,
            reference,
            abs_err,
            rel_err,
        }
    }

    pub fn passes(&self, abs_tol: f64, rel_tol: f64) -> bool {
        self.abs_err <= abs_tol || self.rel_err <= rel_tol
    }
}

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn dense_mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn dense_t(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Eigenvalues (descending) and eigenvectors (columns) of a symmetric matrix
/// by cyclic two-sided Jacobi rotations.
pub fn symmetric_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    let n = a.len();
    let mut a = a.clone();
    let mut v: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let total: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Singular values (descending) via the eigenvalues of `AᵀA` or `AAᵀ`.
pub fn singular_values(a: &Dense) -> Vec<f64> {
    let at = dense_t(a);
    let gram = if a.len() >= at.len() { dense_mul(&at, a) } else { dense_mul(a, &at) };
    symmetric_eigen(&gram).0.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Squared Frobenius error of the best rank-`k` approximation.
pub fn tail_energy(a: &Dense, k: usize) -> f64 {
    singular_values(a).iter().skip(k).map(|s| s * s).sum()
}

/// Orthogonal polar factor `A (AᵀA)^{-1/2}` of a full-column-rank matrix
/// (or the transpose construction for wide inputs).
pub fn polar_factor(a: &Dense) -> Dense {
    let tall = a.len() >= a[0].len();
    let a = if tall { a.clone() } else { dense_t(a) };
    let (vals, vecs) = symmetric_eigen(&dense_mul(&dense_t(&a), &a));
    let n = vals.len();
    let inv_sqrt: Dense = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| vecs[i][k] * vecs[j][k] / vals[k].max(1e-300).sqrt()).sum())
                .collect()
        })
        .collect();
    let p = dense_mul(&a, &inv_sqrt);
    if tall {
        p
    } else {
        dense_t(&p)
    }
}

/// Central-difference gradient of the mean loss, coordinate by coordinate.
pub fn fd_gradient(model: &ModelSpec, params: &ModelParams, batch: &Batch, eps: f64) -> Result<Vec<Matrix>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut out = Vec::with_capacity(params.layers.len());
    for (li, layer) in params.layers.iter().enumerate() {
        let mut g = Matrix::zeros(layer.rows(), layer.cols());
        for e in 0..layer.len() {
            let mut p = params.clone();
            p.layers[li].data_mut()[e] += eps;
            let fp = loss(model, &p, batch)?;
            p.layers[li].data_mut()[e] -= 2.0 * eps;
            let fm = loss(model, &p, batch)?;
            g.data_mut()[e] = (fp - fm) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Central difference of analytic gradients along `v`.
pub fn fd_hvp(model: &ModelSpec, params: &ModelParams, batch: &Batch, v: &ModelParams, eps: f64) -> Result<Vec<Matrix>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut plus = params.clone();
    let mut minus = params.clone();
    for ((p, m), d) in plus.layers.iter_mut().zip(minus.layers.iter_mut()).zip(&v.layers) {
        for ((pe, me), de) in p.data_mut().iter_mut().zip(m.data_mut()).zip(d.data()) {
            *pe += eps * de;
            *me -= eps * de;
        }
    }
    let gp = loss_grad(model, &plus, batch)?.grads;
    let gm = loss_grad(model, &minus, batch)?.grads;
    Ok(gp
        .layers
        .iter()
        .zip(&gm.layers)
        .map(|(a, b)| {
            let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) / (2.0 * eps)).collect();
            Matrix::new(a.rows(), a.cols(), data).expect("same shape")
        })
        .collect())
}

/// Every stored float of a state, in canonical tensor order.
pub fn flat_state(state: &PreconditionerState) -> Vec<f64> {
    state.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// `mean_i ‖flat(Θ_i) − mean_j flat(Θ_j)‖²`.
pub fn flat_drift(states: &[PreconditionerState]) -> f64 {
    let flats: Vec<Vec<f64>> = states.iter().map(flat_state).collect();
    let n = flats.len() as f64;
    let dim = flats[0].len();
    let mean: Vec<f64> = (0..dim).map(|e| flats.iter().map(|f| f[e]).sum::<f64>() / n).collect();
    flats
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// Full-batch gradient descent on `F = mean_i f_i` from zero parameters.
/// Fails when the loss or parameters stop being finite or the loss exceeds
/// `1e6`.
pub fn centralized_descent(task: &FederatedTask, steps: usize, lr: f64) -> Result<ModelParams> {
    let shapes = task.model.shapes();
    let mut flat = vec![0.0; shapes.iter().map(|&(r, c)| r * c).sum()];
    for step in 0..steps {
        let x = ModelParams::unflatten(&flat, &shapes)?;
        let mut grad = vec![0.0; flat.len()];
        let mut f = 0.0;
        for shard in &task.client_shards {
            let r = loss_grad(&task.model, &x, shard)?;
            f += r.loss;
            for (g, v) in grad.iter_mut().zip(r.grads.flatten()) {
                *g += v;
            }
        }
        let n = task.client_shards.len() as f64;
        if !f.is_finite() || f / n > 1e6 {
            return Err(Error::Divergence {
                round: step,
                client: None,
                step: Some(step),
            });
        }
        for (x, g) in flat.iter_mut().zip(&grad) {
            *x -= lr * g / n;
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                round: step,
                client: None,
                step: Some(step),
            });
        }
    }
    ModelParams::unflatten(&flat, &shapes)
}
