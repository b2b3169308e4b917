//! Singular value decompositions and the spectral norm.

use super::qr::{complete_orthonormal, householder_qr};
use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Matrices with both dimensions at or below this size use the exact
/// one-sided Jacobi SVD; larger ones go through randomized subspace iteration.
pub const JACOBI_MAX_DIM: usize = 64;

const RANDOMIZED_OVERSAMPLE: usize = 10;
const RANDOMIZED_POWER_PASSES: usize = 2;
const RANDOMIZED_SEED: u64 = 0x5EED_5BD0;

pub const DEFAULT_SPECTRAL_ITERS: usize = 10_000;
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-6;

/// Thin SVD factors: `A ≈ U diag(s) Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul_t(&self.v)
    }
}

/// Full thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Returns `k = min(m, n)` singular triplets sorted by nonincreasing value.
pub fn jacobi_svd(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let t = jacobi_svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    // m >= n; rotate columns of a working copy until they are orthogonal.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = 1e-15;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = pair_mut(&mut w, p, q);
                rotate(wp, wq, c, s);
                let (vp, vq) = pair_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let smax = norms.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = smax * 1e-14;
    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut null_count = 0;
    for &j in &order {
        let sigma = norms[j];
        v_cols.push(v[j].clone());
        if sigma > cutoff && sigma > 0.0 {
            s.push(sigma);
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
        } else {
            s.push(0.0);
            null_count += 1;
        }
    }
    if null_count > 0 {
        u_cols = complete_orthonormal(u_cols, m, n);
    }
    Svd {
        u: Matrix::from_fn(m, n, |i, j| u_cols[j][i]),
        s,
        v: Matrix::from_fn(n, n, |i, j| v_cols[j][i]),
    }
}

fn pair_mut(v: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = v.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Best rank-`rank` approximation factors of `a`.
pub fn truncated_svd(a: &Matrix, rank: usize) -> Result<Svd> {
    let max = a.rows().min(a.cols());
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    a.check_finite("truncated_svd input")?;
    let full = if a.rows() <= JACOBI_MAX_DIM && a.cols() <= JACOBI_MAX_DIM {
        jacobi_svd(a)
    } else {
        randomized_svd(a, rank)
    };
    Ok(Svd {
        u: full.u.leading_cols(rank),
        s: full.s[..rank].to_vec(),
        v: full.v.leading_cols(rank),
    })
}

/// Randomized range finder with power passes, followed by an exact SVD of the
/// small projected matrix.
fn randomized_svd(a: &Matrix, rank: usize) -> Svd {
    let (m, n) = a.shape();
    let width = (rank + RANDOMIZED_OVERSAMPLE).min(m.min(n));
    let mut rng = Rng::new(RANDOMIZED_SEED);
    let omega = rng.gaussian_matrix(n, width);
    let (mut q, _) = householder_qr(&a.matmul(&omega));
    for _ in 0..RANDOMIZED_POWER_PASSES {
        let (z, _) = householder_qr(&a.t_matmul(&q));
        let (q2, _) = householder_qr(&a.matmul(&z));
        q = q2;
    }
    let b = q.t_matmul(a);
    let small = jacobi_svd(&b);
    Svd {
        u: q.matmul(&small.u),
        s: small.s,
        v: small.v,
    }
}

/// Largest singular value by power iteration on `AᵀA` from a fixed-seed start
/// vector. Returns 0 for the zero matrix.
pub fn spectral_norm(a: &Matrix, iters: usize, tol: f64) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 || a.max_abs() == 0.0 {
        return 0.0;
    }
    let mut rng = Rng::new(0x00C0_FFEE ^ (a.rows() as u64) << 32 ^ n as u64);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut sigma = 0.0_f64;
    for _ in 0..iters.max(1) {
        let av = a.matvec(&v);
        let next_sigma = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = a.t_matvec(&av);
        if normalize(&mut w) == 0.0 {
            return next_sigma;
        }
        v = w;
        let converged = (next_sigma - sigma).abs() <= 1e-3 * tol * next_sigma;
        sigma = next_sigma;
        if converged {
            break;
        }
    }
    // Rayleigh estimate with the final vector.
    let av = a.matvec(&v);
    av.iter().map(|x| x * x).sum::<f64>().sqrt().max(sigma)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}
