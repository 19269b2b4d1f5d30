//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use apce_core::problems::KlExpansion;
use nalgebra::{DMatrix, DVector};

/// Vertex-centred finite volumes for `-(exp(a) u')' = 1`, `u(0) = u(1) = 0`, on `cells`
/// uniform cells. Face resistances `int 1/D` use two-point Gauss; the tridiagonal system
/// is solved by the Thomas algorithm. Returns `u` at the node nearest `x_star`.
pub fn finite_volume_elliptic(kl: &KlExpansion, xi: &[f64], x_star: f64, cells: usize) -> f64 {
    let h = 1.0 / cells as f64;
    let g = 0.5 / 3f64.sqrt();
    // conductance of each cell, 1 / int_{cell} 1/D
    let cond: Vec<f64> = (0..cells)
        .map(|i| {
            let mid = (i as f64 + 0.5) * h;
            let r = 0.5 * h * ((-kl.field(xi, mid - g * h)).exp() + (-kl.field(xi, mid + g * h)).exp());
            1.0 / r
        })
        .collect();
    // unknowns u_1 .. u_{cells-1}
    let n = cells - 1;
    let mut diag: Vec<f64> = (0..n).map(|i| cond[i] + cond[i + 1]).collect();
    let lower: Vec<f64> = (0..n).map(|i| -cond[i]).collect();
    let upper: Vec<f64> = (0..n).map(|i| -cond[i + 1]).collect();
    let mut rhs = vec![h; n];
    for i in 1..n {
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    let mut u = vec![0.0; n];
    u[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = (rhs[i] - upper[i] * u[i + 1]) / diag[i];
    }
    let node = (x_star * cells as f64).round() as usize;
    if node == 0 || node == cells {
        0.0
    } else {
        u[node - 1]
    }
}

/// Every support of size at most `s_max` on which `b` lies in the span of the columns,
/// grouped by the smallest such size. Returns that size and the supports with their
/// least-squares coefficients.
pub fn l0_exhaustive(a: &DMatrix<f64>, b: &DVector<f64>, s_max: usize, tol: f64) -> Option<(usize, Vec<(Vec<usize>, Vec<f64>)>)> {
    let n = a.ncols();
    if b.norm() <= tol {
        return Some((0, vec![(Vec::new(), Vec::new())]));
    }
    for k in 1..=s_max {
        let mut hits = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let sub = a.select_columns(&idx);
            let svd = sub.clone().svd(true, true);
            if svd.singular_values.min() > 1e-10 * svd.singular_values.max() {
                let x = svd.solve(b, 1e-14).expect("svd solve");
                if (&sub * &x - b).norm() <= tol * (1.0 + b.norm()) && x.iter().all(|v| v.abs() > 1e-9) {
                    hits.push((idx.clone(), x.iter().copied().collect()));
                }
            }
            // next combination
            let mut i = k;
            while i > 0 && idx[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
        if !hits.is_empty() {
            return Some((k, hits));
        }
    }
    None
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
