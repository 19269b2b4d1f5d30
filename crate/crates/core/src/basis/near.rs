//! Near-orthonormal bases: relax the orthogonality constraints by
//! cross-validated tolerances and minimize each coefficient row's norm.
//!
//! Row `k` is written in coordinates of the exact orthonormal basis `E` as
//! `g = (u, 1) / |(u, 1)|`, so its empirical norm is one. With `H` the
//! earlier near-orthonormal rows in the same coordinates, `v = H u` collects
//! the (unnormalized) inner products with those rows. Minimizing the squared
//! coefficient norm `(u, 1)^T E E^T (u, 1)` subject to `|v_j| <= zeta_kj` is a
//! convex box-constrained quadratic program in `v`. Normalizing afterwards only
//! shrinks `v` and the objective, so the result stays feasible and never
//! exceeds the exact row's norm (which corresponds to `v = 0`). The row is then
//! scaled to the smallest empirical norm the diagonal band allows, `1 - zeta_kk`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::orthonormal::{coefficient_gram, orthonormalize, whitening_factor};
use super::{PolynomialBasis, Provenance};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{Measure, SampleSet};
use crate::multi_index::MultiIndexSet;

/// Constraint grouping for the near-orthonormal construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearMode {
    /// One bound per earlier basis function.
    #[default]
    Pairwise,
    /// One Euclidean bound per earlier degree block (root-sum-square tolerance).
    Grouped,
}

impl NearMode {
    pub fn name(self) -> &'static str {
        match self {
            NearMode::Pairwise => "pairwise",
            NearMode::Grouped => "grouped",
        }
    }
}

/// Near-orthonormal basis together with the exact basis it was derived from.
#[derive(Debug, Clone)]
pub struct NearReport {
    pub basis: PolynomialBasis,
    pub exact: PolynomialBasis,
    /// Symmetric tolerance table; the diagonal bounds the normalization error.
    pub zeta: DMatrix<f64>,
}

// Exact whitening of a Gram matrix refined by a second algebraic pass.
fn refined_factor(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f1 = whitening_factor(g)?;
    let g2 = &f1 * g * f1.transpose();
    let mut g2 = g2;
    linalg::symmetrize(&mut g2);
    let f2 = whitening_factor(&g2)?;
    Ok(f2 * f1)
}

fn zeta_from_grams(g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f1 = refined_factor(g1)?;
    let f2 = refined_factor(g2)?;
    let t1 = &f1 * g2 * f1.transpose();
    let t2 = &f2 * g1 * f2.transpose();
    let n = g1.nrows();
    let c = 1.0 / (2.0 * std::f64::consts::SQRT_2);
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        let a = 0.5 * (t1[(i, j)] + t1[(j, i)]) - id;
        let b = 0.5 * (t2[(i, j)] + t2[(j, i)]) - id;
        (a.abs() + b.abs()) * c
    }))
}

/// Cross-validated tolerances: each half's orthonormal basis is tested on the other half.
pub fn cross_validation_zeta(s1: &SampleSet, s2: &SampleSet, d: usize, p: usize) -> Result<DMatrix<f64>> {
    if s1.dim() != d || s2.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if s1.dim() != d { s1.dim() } else { s2.dim() },
        });
    }
    let index = MultiIndexSet::graded_lex(d, p)?;
    for s in [s1, s2] {
        if s.len() < index.len() {
            return Err(Error::RankDeficient(format!(
                "{} points cannot support {} basis functions",
                s.len(),
                index.len()
            )));
        }
    }
    let g1 = coefficient_gram(s1, &index, None, None);
    let g2 = coefficient_gram(s2, &index, None, None);
    zeta_from_grams(&g1, &g2)
}

/// Near-orthonormal basis on `s`, with tolerances cross-validated between its two halves.
pub fn near_orthonormal(s: &SampleSet, d: usize, p: usize, mode: NearMode) -> Result<NearReport> {
    let (s1, s2) = s.split_halves()?;
    let zeta = cross_validation_zeta(&s1, &s2, d, p)?;
    near_orthonormal_with_zeta(s, d, p, &zeta, mode)
}

/// Near-orthonormal basis on `s` for a given tolerance table.
pub fn near_orthonormal_with_zeta(
    s: &SampleSet,
    d: usize,
    p: usize,
    zeta: &DMatrix<f64>,
    mode: NearMode,
) -> Result<NearReport> {
    if s.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.dim(),
        });
    }
    let index = MultiIndexSet::graded_lex(d, p)?;
    let n = index.len();
    if zeta.nrows() != n || zeta.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: zeta.nrows(),
        });
    }
    if zeta.iter().any(|z| !(*z >= 0.0)) {
        return Err(Error::InvalidArgument("tolerances must be non-negative".into()));
    }
    let e = orthonormalize(s, &index, None)?;
    let exact = PolynomialBasis::new(index.clone(), e.clone(), Provenance::ExactDiscrete, None)?;
    let (coeffs, fallbacks) = relax_rows(&e, zeta, &index, mode);
    let mut basis = PolynomialBasis::new(index, coeffs, Provenance::NearOrthonormal { mode }, None)?;
    basis.set_fallback_rows(fallbacks);
    Ok(NearReport {
        basis,
        exact,
        zeta: zeta.clone(),
    })
}

// Returns the near-orthonormal coefficient matrix and the rows that fell back to `e`.
fn relax_rows(
    e: &DMatrix<f64>,
    zeta: &DMatrix<f64>,
    index: &MultiIndexSet,
    mode: NearMode,
) -> (DMatrix<f64>, Vec<usize>) {
    let n = e.nrows();
    let p_mat = e * e.transpose();
    let exact_norms: Vec<f64> = (0..n).map(|k| e.row(k).norm()).collect();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut fallbacks = Vec::new();
    w[(0, 0)] = 1.0;
    out.row_mut(0).copy_from(&e.row(0));

    // q_full holds W^T P W for the rows processed so far, grown by a border each step
    let mut q_full = DMatrix::<f64>::zeros(n, n);
    q_full[(0, 0)] = p_mat[(0, 0)];
    for k in 1..n {
        let wk = w.view((0, 0), (k, k));
        let q = q_full.view((0, 0), (k, k)).clone_owned();
        let pcol = p_mat.view((0, k), (k, 1));
        let c = wk.transpose() * pcol;
        let bounds: Vec<f64> = (0..k).map(|j| zeta[(k, j)]).collect();

        let v = match mode {
            NearMode::Pairwise => box_qp(&q, c.as_slice(), &bounds),
            NearMode::Grouped => {
                let groups = degree_groups(index, k, &bounds);
                ball_qp(&q, c.as_slice(), &groups)
            }
        };
        let u = &wk * nalgebra::DVector::from_column_slice(&v);
        let scale = 1.0 / (u.norm_squared() + 1.0).sqrt();
        let mut g = vec![0.0; k + 1];
        for i in 0..k {
            g[i] = u[i] * scale;
        }
        g[k] = scale;
        // the diagonal band lets the empirical norm drop to 1 - zeta_kk, which the
        // minimal-norm row always uses; off-diagonal products only shrink with it
        let shrink = (1.0 - zeta[(k, k)]).max(0.0).sqrt();
        if shrink > 0.0 {
            g.iter_mut().for_each(|x| *x *= shrink);
        }

        let mut row = vec![0.0; n];
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                for (j, r) in row.iter_mut().enumerate().take(i + 1) {
                    *r += gi * e[(i, j)];
                }
            }
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let valid = g.iter().all(|x| x.is_finite()) && norm <= exact_norms[k] + 1e-12;
        if !valid {
            fallbacks.push(k);
            g.iter_mut().for_each(|x| *x = 0.0);
            g[k] = 1.0;
            row.copy_from_slice(e.row(k).transpose().as_slice());
        }
        for (j, &x) in row.iter().enumerate() {
            out[(k, j)] = x;
        }
        // inverse of the extended lower-triangular H
        let hkk = g[k];
        for j in 0..k {
            let mut acc = 0.0;
            for i in j..k {
                acc += g[i] * w[(i, j)];
            }
            w[(k, j)] = -acc / hkk;
        }
        w[(k, k)] = 1.0 / hkk;
        // W_{k+1}^T P W_{k+1} from W_k^T P W_k with the new row (w_k, w_kk) of W
        let pkk = p_mat[(k, k)];
        let wkk = w[(k, k)];
        for i in 0..k {
            let wi = w[(k, i)];
            for j in 0..=i {
                let wj = w[(k, j)];
                let v = q_full[(i, j)] + c[i] * wj + wi * c[j] + pkk * wi * wj;
                q_full[(i, j)] = v;
                q_full[(j, i)] = v;
            }
            let v = (c[i] + pkk * wi) * wkk;
            q_full[(i, k)] = v;
            q_full[(k, i)] = v;
        }
        q_full[(k, k)] = pkk * wkk * wkk;
    }
    for k in 0..n {
        for j in (k + 1)..n {
            out[(k, j)] = 0.0;
        }
    }
    (out, fallbacks)
}

// Earlier indices grouped by total degree, with root-sum-square tolerances.
fn degree_groups(index: &MultiIndexSet, k: usize, bounds: &[f64]) -> Vec<(Vec<usize>, f64)> {
    index
        .degree_blocks()
        .iter()
        .filter_map(|block| {
            let members: Vec<usize> = block.clone().filter(|&j| j < k).collect();
            if members.is_empty() {
                return None;
            }
            let r = members.iter().map(|&j| bounds[j] * bounds[j]).sum::<f64>().sqrt();
            Some((members, r))
        })
        .collect()
}

fn objective(q: &DMatrix<f64>, c: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut f = 0.0;
    for i in 0..n {
        let mut qi = 0.0;
        for j in 0..n {
            qi += q[(i, j)] * x[j];
        }
        f += x[i] * (0.5 * qi + c[i]);
    }
    f
}

fn gradient(q: &DMatrix<f64>, c: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| c[i] + (0..n).map(|j| q[(i, j)] * x[j]).sum::<f64>())
        .collect()
}

/// Minimizes `x^T Q x / 2 + c^T x` over `|x_i| <= b_i`.
///
/// Primal-dual active-set iterations usually settle in a few steps; if they cycle
/// or a reduced system is singular, projected Newton steps take over.
pub(crate) fn box_qp(q: &DMatrix<f64>, c: &[f64], b: &[f64]) -> Vec<f64> {
    if let Some(x) = active_set_qp(q, c, b) {
        return x;
    }
    projected_newton_qp(q, c, b)
}

// Bound state of each coordinate in the active-set method.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Upper,
    Lower,
}

fn active_set_qp(q: &DMatrix<f64>, c: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = c.len();
    let mut state: Vec<Bound> = b
        .iter()
        .map(|&bi| if bi == 0.0 { Bound::Upper } else { Bound::Free })
        .collect();
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())) + q.amax();
    let tol = 1e-12 * (1.0 + scale);
    let mut x = vec![0.0; n];
    for _ in 0..40 {
        for i in 0..n {
            x[i] = match state[i] {
                Bound::Free => 0.0,
                Bound::Upper => b[i],
                Bound::Lower => -b[i],
            };
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        if !free.is_empty() {
            let nf = free.len();
            let qff = DMatrix::from_fn(nf, nf, |a, bb| q[(free[a], free[bb])]);
            let rhs = nalgebra::DVector::from_iterator(
                nf,
                free.iter().map(|&i| -c[i] - (0..n).map(|j| q[(i, j)] * x[j]).sum::<f64>()),
            );
            let sol = qff.cholesky()?.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        let grad = gradient(q, c, &x);
        let mut next = state.clone();
        for i in 0..n {
            if b[i] == 0.0 {
                continue;
            }
            // multiplier of the active bound is -grad; it must push outward
            let mu = -grad[i];
            next[i] = match state[i] {
                Bound::Free if x[i] > b[i] => Bound::Upper,
                Bound::Free if x[i] < -b[i] => Bound::Lower,
                Bound::Upper if mu < 0.0 => Bound::Free,
                Bound::Lower if mu > 0.0 => Bound::Free,
                s => s,
            };
        }
        if next == state {
            let feasible = (0..n).all(|i| x[i].abs() <= b[i] * (1.0 + 1e-12));
            let stationary = (0..n).all(|i| match state[i] {
                Bound::Free => grad[i].abs() <= tol.max(1e-9 * scale),
                Bound::Upper => grad[i] <= tol,
                Bound::Lower => grad[i] >= -tol,
            });
            return (feasible && stationary).then_some(x);
        }
        state = next;
    }
    None
}

fn projected_newton_qp(q: &DMatrix<f64>, c: &[f64], b: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut x = vec![0.0; n];
    if n == 0 {
        return x;
    }
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())) + q.amax();
    let tol = 1e-13 * (1.0 + scale);
    let mut f = 0.0;
    for _ in 0..500 {
        let grad = gradient(q, c, &x);
        let eps = |i: usize| 1e-12 * b[i].max(1e-300);
        let binding = |i: usize, g: f64| {
            b[i] == 0.0 || (x[i] <= -b[i] + eps(i) && g > 0.0) || (x[i] >= b[i] - eps(i) && g < 0.0)
        };
        let free: Vec<usize> = (0..n).filter(|&i| !binding(i, grad[i])).collect();
        let pg = free.iter().fold(0.0f64, |m, &i| m.max(grad[i].abs()));
        if pg <= tol {
            break;
        }
        let nf = free.len();
        let qff = DMatrix::from_fn(nf, nf, |a, bb| q[(free[a], free[bb])]);
        let rhs = nalgebra::DVector::from_iterator(nf, free.iter().map(|&i| -grad[i]));
        let step = match qff.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let ridge = 1e-12 * (1.0 + qff.amax());
                match (qff + DMatrix::identity(nf, nf) * ridge).cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => rhs.clone(),
                }
            }
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = x.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] = (x[i] + alpha * step[a]).clamp(-b[i], b[i]);
            }
            let ft = objective(q, c, &trial);
            let decrease: f64 = (0..n).map(|i| grad[i] * (trial[i] - x[i])).sum();
            if ft <= f + 1e-4 * decrease && ft < f {
                x = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Minimizes the same quadratic over a product of Euclidean balls by accelerated projected gradient.
pub(crate) fn ball_qp(q: &DMatrix<f64>, c: &[f64], groups: &[(Vec<usize>, f64)]) -> Vec<f64> {
    let n = c.len();
    let mut best = vec![0.0; n];
    if n == 0 {
        return best;
    }
    let lmax = linalg::symmetric_spectral_norm(q).max(1e-300);
    let step = 1.0 / lmax;
    let project = |x: &mut [f64]| {
        for (members, r) in groups {
            let norm = members.iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt();
            if norm > *r {
                let s = if norm > 0.0 { r / norm } else { 0.0 };
                for &j in members {
                    x[j] *= s;
                }
            }
        }
    };
    let mut best_f = 0.0;
    let mut x = vec![0.0; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..5000 {
        let g = gradient(q, c, &y);
        let mut next: Vec<f64> = (0..n).map(|i| y[i] - step * g[i]).collect();
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change = (0..n).map(|i| (next[i] - x[i]).abs()).fold(0.0, f64::max);
        for i in 0..n {
            y[i] = next[i] + (t - 1.0) / t_next * (next[i] - x[i]);
        }
        x = next;
        t = t_next;
        let fx = objective(q, c, &x);
        if fx < best_f {
            best_f = fx;
            best.copy_from_slice(&x);
        }
        if change <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gram_schmidt_discrete;
    use crate::measure::GaussianMixtureSpec;

    fn gm_samples(d: usize, n: usize, seed: u64) -> SampleSet {
        GaussianMixtureSpec::random_centered(d, 3, seed)
            .unwrap()
            .sample(n, seed + 100)
            .unwrap()
    }

    #[test]
    fn box_qp_matches_hand_solution() {
        // min (x - 2)^2 / 2 + (y + 0.3)^2 / 2 with |x| <= 1, |y| <= 1
        let q = DMatrix::identity(2, 2);
        let x = box_qp(&q, &[-2.0, 0.3], &[1.0, 1.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] + 0.3).abs() < 1e-12);
        let fixed = box_qp(&q, &[-2.0, 0.3], &[0.0, 1.0]);
        assert_eq!(fixed[0], 0.0);
    }

    #[test]
    fn active_set_agrees_with_projected_newton() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..40 {
            let n = 2 + trial % 12;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &a * a.transpose() + DMatrix::identity(n, n) * 1e-3;
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|i| if i % 5 == 4 { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
            let x = box_qp(&q, &c, &b);
            let y = projected_newton_qp(&q, &c, &b);
            assert!(x.iter().zip(&b).all(|(v, bi)| v.abs() <= bi * (1.0 + 1e-12)));
            let (fx, fy) = (objective(&q, &c, &x), objective(&q, &c, &y));
            assert!(fx <= fy + 1e-10 * (1.0 + fy.abs()), "{fx} {fy}");
        }
    }

    #[test]
    fn ball_qp_projects_groups() {
        let q = DMatrix::identity(3, 3);
        let x = ball_qp(&q, &[-3.0, -4.0, 0.5], &[(vec![0, 1], 1.0), (vec![2], 1.0)]);
        assert!((x[0] - 0.6).abs() < 1e-9 && (x[1] - 0.8).abs() < 1e-9);
        assert!((x[2] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_tolerance_reproduces_exact_basis() {
        let s = gm_samples(3, 2000, 1);
        let n = MultiIndexSet::graded_lex(3, 3).unwrap().len();
        let zeta = DMatrix::zeros(n, n);
        for mode in [NearMode::Pairwise, NearMode::Grouped] {
            let r = near_orthonormal_with_zeta(&s, 3, 3, &zeta, mode).unwrap();
            let exact = gram_schmidt_discrete(&s, 3, 3).unwrap();
            let diff = (r.basis.coefficients() - exact.coefficients()).amax();
            assert!(diff < 1e-10, "{diff}");
        }
    }

    #[test]
    fn identical_halves_give_vanishing_tolerances() {
        let s = gm_samples(3, 1000, 2);
        let z = cross_validation_zeta(&s, &s, 3, 2).unwrap();
        assert!(z.amax() < 1e-10, "{}", z.amax());
        let r = near_orthonormal_with_zeta(&s, 3, 2, &z, NearMode::Pairwise).unwrap();
        assert!((r.basis.coefficients() - r.exact.coefficients()).amax() < 1e-8);
    }

    #[test]
    fn tolerances_shrink_with_more_samples() {
        let mut means = Vec::new();
        for n in [1_000, 10_000, 100_000] {
            let s = gm_samples(2, n, 3);
            let (a, b) = s.split_halves().unwrap();
            let z = cross_validation_zeta(&a, &b, 2, 2).unwrap();
            assert!(z.iter().all(|v| *v >= 0.0));
            means.push(z.mean());
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn constraints_hold_and_norms_never_grow() {
        let s = gm_samples(4, 3000, 4);
        for mode in [NearMode::Pairwise, NearMode::Grouped] {
            let r = near_orthonormal(&s, 4, 2, mode).unwrap();
            let g = r.basis.gram(&s).unwrap();
            let n = r.basis.len();
            for k in 0..n {
                assert!((g[(k, k)] - 1.0).abs() <= r.zeta[(k, k)] + 1e-10);
                if mode == NearMode::Pairwise {
                    for j in 0..k {
                        assert!(g[(k, j)].abs() <= r.zeta[(k, j)] + 1e-9, "({k},{j})");
                    }
                }
            }
            let near = r.basis.row_norms();
            let exact = r.exact.row_norms();
            for k in 0..n {
                assert!(near[k] <= exact[k] + 1e-12, "row {k}");
            }
            assert!(near.iter().zip(&exact).any(|(a, b)| a < &(b * 0.999)));
        }
    }
}
