//! Dense linear-algebra helpers shared by the basis, solver and diagnostics modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::par;

/// Accumulates `sum_k w_k v(x_k) v(x_k)^T` where `fill(k, out)` writes `v(x_k)` into `out`.
///
/// Work is split into chunks whose partial sums are added in chunk order.
pub fn weighted_gram<F>(count: usize, width: usize, weights: &[f64], fill: F) -> DMatrix<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    par::fold_chunks(
        count,
        par::CHUNK,
        DMatrix::zeros(width, width),
        |start, end| {
            let rows = end - start;
            let mut v = DMatrix::<f64>::zeros(rows, width);
            let mut wv = DMatrix::<f64>::zeros(rows, width);
            let mut buf = vec![0.0; width];
            for (r, k) in (start..end).enumerate() {
                fill(k, &mut buf);
                let w = weights[k];
                for (j, &b) in buf.iter().enumerate() {
                    v[(r, j)] = b;
                    wv[(r, j)] = w * b;
                }
            }
            let mut g = DMatrix::zeros(width, width);
            g.gemm_tr(1.0, &v, &wv, 0.0);
            g
        },
        |acc, part| acc + part,
    )
}

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} Gram matrix", m.nrows(), m.ncols())))
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::identity(n, n);
    if !l.solve_lower_triangular_mut(&mut inv) {
        return Err(Error::NotPositiveDefinite("singular triangular factor".into()));
    }
    // clear round-off above the diagonal
    for j in 0..n {
        for i in 0..j {
            inv[(i, j)] = 0.0;
        }
    }
    Ok(inv)
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v))
}

/// `max_ij |a_ij - I_ij|`.
pub fn max_abs_identity_deviation(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// Eigenvalues of a small dense symmetric matrix (row-major, `n x n`) by cyclic Jacobi.
pub fn jacobi_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        let scale: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Thin SVD truncated to numerical rank: `A = U diag(s) V^T`.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::EigenFailure("SVD did not converge".into()))?;
        let u = svd.u.ok_or_else(|| Error::EigenFailure("missing U".into()))?;
        let vt = svd.v_t.ok_or_else(|| Error::EigenFailure("missing V".into()))?;
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let r = keep.len();
        let mut uu = DMatrix::zeros(a.nrows(), r);
        let mut vv = DMatrix::zeros(a.ncols(), r);
        let mut s = DVector::zeros(r);
        for (c, &i) in keep.iter().enumerate() {
            uu.set_column(c, &u.column(i));
            vv.set_column(c, &vt.row(i).transpose());
            s[c] = svd.singular_values[i];
        }
        Ok(Self { u: uu, s, v: vv })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_matches_known_spectrum() {
        let mut a = vec![2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let mut ev = jacobi_eigenvalues(&mut a, 3);
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((ev[0] - 1.0).abs() < 1e-14);
        assert!((ev[1] - 3.0).abs() < 1e-14);
        assert!((ev[2] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_cancelled_mass() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn triangular_inverse() {
        let l = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 4.0]);
        let inv = lower_triangular_inverse(&l).unwrap();
        let prod = &l * &inv;
        assert!(max_abs_identity_deviation(&prod) < 1e-15);
    }

    #[test]
    fn gram_of_points() {
        let pts = [1.0, 2.0, -1.0, 0.5];
        let w = [0.25, 0.75];
        let g = weighted_gram(2, 2, &w, |k, out| {
            out[0] = pts[2 * k];
            out[1] = pts[2 * k + 1];
        });
        assert!((g[(0, 0)] - (0.25 + 0.75)).abs() < 1e-15);
        assert!((g[(0, 1)] - (0.25 * 2.0 - 0.75 * 0.5)).abs() < 1e-15);
        assert!((g[(1, 1)] - (0.25 * 4.0 + 0.75 * 0.25)).abs() < 1e-15);
    }
}
