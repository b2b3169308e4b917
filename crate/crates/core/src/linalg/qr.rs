use super::Matrix;
use crate::error::{shape_err, Result};

/// Thin Householder QR of an m×n matrix: `A = QR` with `Q` m×k orthonormal
/// columns and `R` k×n upper triangular, k = min(m, n).
///
/// Signs are normalized so that `diag(R) ≥ 0`. With that convention, refining
/// an already-orthonormal basis (`A ≈ QΛ` with positive Λ) returns `Q`
/// unchanged rather than with flipped columns. Rank-deficient inputs still
/// produce orthonormal `Q`: zero columns leave the reflector as identity.
pub fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = a.shape();
    let k = m.min(n);
    // Column-major working copy.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);

    for j in 0..k {
        let x = &cols[j][j..];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = x.to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        for e in v.iter_mut() {
            *e /= vnorm;
        }
        for col in cols.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let d: f64 = tail.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (t, &vi) in tail.iter_mut().zip(&v) {
                *t -= 2.0 * d * vi;
            }
        }
        reflectors.push(Some(v));
    }

    let mut r = Matrix::zeros(k, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..k.min(j + 1) {
            r.set(i, j, col[i]);
        }
    }

    // Q = H_0 H_1 ... H_{k-1} applied to the first k columns of the identity.
    let mut q_cols: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, refl) in reflectors.iter().enumerate().rev() {
        if let Some(v) = refl {
            for q in q_cols.iter_mut() {
                let tail = &mut q[j..];
                let d: f64 = tail.iter().zip(v).map(|(a, b)| a * b).sum();
                for (t, &vi) in tail.iter_mut().zip(v) {
                    *t -= 2.0 * d * vi;
                }
            }
        }
    }

    let mut q = Matrix::from_fn(m, k, |i, j| q_cols[j][i]);
    for i in 0..k {
        if r.get(i, i) < 0.0 {
            for j in 0..n {
                r.set(i, j, -r.get(i, j));
            }
            for row in 0..m {
                q.set(row, i, -q.get(row, i));
            }
        }
    }
    (q, r)
}

/// One subspace-iteration refinement of the eigenbasis `q` of a symmetric
/// PSD matrix `p`: `Q' = orth(P·Q)`.
pub fn qr_eigenvectors(p: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = p.rows();
    if p.cols() != n {
        return Err(shape_err("square P", format!("{}x{}", p.rows(), p.cols())));
    }
    if q.shape() != (n, n) {
        return Err(shape_err(
            format!("{n}x{n} Q"),
            format!("{}x{}", q.rows(), q.cols()),
        ));
    }
    let s = p.matmul(q);
    let (q_new, _) = householder_qr(&s);
    Ok(q_new)
}

/// Orthonormal basis of the complement of `basis` columns, appended until
/// `target` columns exist. `basis` columns must already be orthonormal.
pub(crate) fn complete_orthonormal(mut basis: Vec<Vec<f64>>, dim: usize, target: usize) -> Vec<Vec<f64>> {
    let mut e = 0;
    while basis.len() < target && e < dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        e += 1;
        // Two Gram–Schmidt passes for stability.
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= d * bi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn orth_defect(q: &Matrix) -> f64 {
        let g = q.t_matmul(q);
        g.sub(&Matrix::identity(q.cols())).frobenius_norm()
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let mut rng = Rng::new(3);
        for &(m, n) in &[(5, 5), (8, 3), (3, 7)] {
            let a = rng.gaussian_matrix(m, n);
            let (q, r) = householder_qr(&a);
            assert!(orth_defect(&q) < 1e-12);
            assert!(q.matmul(&r).sub(&a).max_abs() < 1e-12);
            for i in 0..r.rows() {
                assert!(r.get(i, i) >= 0.0);
                for j in 0..i.min(r.cols()) {
                    assert_eq!(r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn rank_deficient_input_still_orthonormal() {
        let u = Matrix::column(&[1.0, 2.0, 3.0]);
        let a = u.matmul_t(&u);
        let (q, _) = householder_qr(&a);
        assert!(orth_defect(&q) < 1e-12);
        let (q0, _) = householder_qr(&Matrix::zeros(3, 3));
        assert_eq!(q0, Matrix::identity(3));
    }

    #[test]
    fn identity_and_diagonal_are_fixed_points() {
        let i3 = Matrix::identity(3);
        assert_eq!(qr_eigenvectors(&i3, &i3).unwrap(), i3);
        let p = Matrix::from_diag(&[4.0, 1.0]);
        let q = qr_eigenvectors(&p, &Matrix::identity(2)).unwrap();
        assert!(q.sub(&Matrix::identity(2)).max_abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = Matrix::identity(3);
        assert!(qr_eigenvectors(&p, &Matrix::identity(2)).is_err());
        assert!(qr_eigenvectors(&Matrix::zeros(2, 3), &Matrix::identity(2)).is_err());
    }
}
