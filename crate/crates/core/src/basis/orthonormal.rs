use nalgebra::DMatrix;

use super::{InputScaling, PolynomialBasis, Provenance};
use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{Measure, QuadratureRule, SampleSet};
use crate::multi_index::MultiIndexSet;
use crate::par;

/// Largest accepted condition estimate of the (diagonally scaled) monomial Gram matrix.
pub const CONDITION_LIMIT: f64 = 1e14;

/// `sum_k w_k (C m(x_k)) (C m(x_k))^T`, or the plain monomial Gram when `coeffs` is `None`.
pub(crate) fn coefficient_gram<M: Measure + ?Sized>(
    m: &M,
    index: &MultiIndexSet,
    scaling: Option<&InputScaling>,
    coeffs: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let n = index.len();
    let d = index.dim();
    let w = m.weights();
    let ct = coeffs.map(|c| c.transpose());
    let mut g = par::fold_chunks(
        m.len(),
        par::CHUNK,
        DMatrix::zeros(n, n),
        |s, e| {
            let mut v = DMatrix::<f64>::zeros(e - s, n);
            let mut scratch = vec![0.0; d];
            let mut mono = vec![0.0; n];
            for (r, k) in (s..e).enumerate() {
                match scaling {
                    Some(sc) => {
                        sc.apply(m.point(k), &mut scratch);
                        index.monomials_into(&scratch, &mut mono);
                    }
                    None => index.monomials_into(m.point(k), &mut mono),
                }
                for (j, &x) in mono.iter().enumerate() {
                    v[(r, j)] = x;
                }
            }
            let v = match &ct {
                Some(ct) => &v * ct,
                None => v,
            };
            let mut wv = v.clone();
            for (r, k) in (s..e).enumerate() {
                wv.row_mut(r).scale_mut(w[k]);
            }
            let mut g = DMatrix::zeros(n, n);
            g.gemm_tr(1.0, &v, &wv, 0.0);
            g
        },
        |a, b| a + b,
    );
    linalg::symmetrize(&mut g);
    g
}

/// Whitens a Gram matrix: returns lower-triangular `F` with `F G F^T = I`,
/// positive diagonal, after diagonal equilibration.
pub(crate) fn whitening_factor(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let mut dscale = vec![0.0; n];
    for (i, ds) in dscale.iter_mut().enumerate() {
        let gi = g[(i, i)];
        if !(gi > 0.0) || !gi.is_finite() {
            return Err(Error::IllConditioned {
                estimate: f64::INFINITY,
            });
        }
        *ds = 1.0 / gi.sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * dscale[i] * dscale[j]);
    let l = linalg::cholesky_lower(&scaled).map_err(|_| Error::IllConditioned {
        estimate: f64::INFINITY,
    })?;
    let (lo, hi) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        (lo.min(l[(i, i)]), hi.max(l[(i, i)]))
    });
    let estimate = (hi / lo).powi(2);
    if !(estimate <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { estimate });
    }
    let mut f = linalg::lower_triangular_inverse(&l)?;
    for j in 0..n {
        f.column_mut(j).scale_mut(dscale[j]);
    }
    Ok(f)
}

/// Coefficients of the basis orthonormal with respect to `m`.
///
/// Cholesky whitening of the monomial Gram matrix followed by one
/// re-orthogonalization pass computed from the data.
pub fn orthonormalize<M: Measure + ?Sized>(
    m: &M,
    index: &MultiIndexSet,
    scaling: Option<&InputScaling>,
) -> Result<DMatrix<f64>> {
    let n = index.len();
    if m.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: m.dim(),
        });
    }
    if m.len() < n {
        return Err(Error::RankDeficient(format!(
            "{} points cannot support {n} basis functions",
            m.len()
        )));
    }
    let g = coefficient_gram(m, index, scaling, None);
    let f1 = whitening_factor(&g)?;
    let g2 = coefficient_gram(m, index, scaling, Some(&f1));
    let f2 = whitening_factor(&g2)?;
    let mut f = f2 * f1;
    for j in 0..n {
        for i in 0..j {
            f[(i, j)] = 0.0;
        }
    }
    Ok(f)
}

/// Basis orthonormal on the empirical measure of `s`.
pub fn gram_schmidt_discrete(s: &SampleSet, d: usize, p: usize) -> Result<PolynomialBasis> {
    if s.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: s.dim(),
        });
    }
    let index = MultiIndexSet::graded_lex(d, p)?;
    let f = orthonormalize(s, &index, None)?;
    PolynomialBasis::new(index, f, Provenance::ExactDiscrete, None)
}

fn check_exactness(rule: &QuadratureRule, p: usize) -> Result<()> {
    if rule.exactness() < 2 * p {
        return Err(Error::InsufficientExactness {
            needed: 2 * p,
            available: rule.exactness(),
        });
    }
    Ok(())
}

fn pushforward(rule: &QuadratureRule, q: &DMatrix<f64>) -> Result<QuadratureRule> {
    let d = rule.dim();
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: q.nrows(),
        });
    }
    Ok(rule.map_nodes(|z, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|j| q[(i, j)] * z[j]).sum();
        }
    }))
}

/// Basis orthonormal for `xi = Q z` with `z` distributed per `rule`; `Q` must be orthogonal.
pub fn gram_schmidt_quadrature(
    rule: &QuadratureRule,
    q: Option<&DMatrix<f64>>,
    p: usize,
) -> Result<PolynomialBasis> {
    check_exactness(rule, p)?;
    let d = rule.dim();
    let index = MultiIndexSet::graded_lex(d, p)?;
    let f = match q {
        None => orthonormalize(rule, &index, None)?,
        Some(q) => {
            if q.nrows() != d || q.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: q.nrows(),
                });
            }
            let dev = linalg::max_abs_identity_deviation(&(q.transpose() * q));
            if dev > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "rotation is not orthogonal (|Q^T Q - I| = {dev:.2e})"
                )));
            }
            orthonormalize(&pushforward(rule, q)?, &index, None)?
        }
    };
    PolynomialBasis::new(index, f, Provenance::ExactQuadrature, None)
}

/// As [`gram_schmidt_quadrature`] but for any invertible linear map `Q`.
pub fn gram_schmidt_pushforward(
    rule: &QuadratureRule,
    q: &DMatrix<f64>,
    p: usize,
) -> Result<PolynomialBasis> {
    check_exactness(rule, p)?;
    let d = rule.dim();
    let smin = q.clone().singular_values().min();
    if !(smin > 1e-12 * q.amax()) {
        return Err(Error::RankDeficient("linear map is singular".into()));
    }
    let index = MultiIndexSet::graded_lex(d, p)?;
    let f = orthonormalize(&pushforward(rule, q)?, &index, None)?;
    PolynomialBasis::new(index, f, Provenance::ExactQuadrature, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::classical;
    use crate::measure::{gauss_rule_1d, tensor_rule, DensityFamily, GaussianMixtureSpec, DEFAULT_NODE_CAP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss_samples(n: usize, d: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleSet::new(d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn two_point_set_gives_identity_polynomial() {
        let s = SampleSet::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let b = gram_schmidt_discrete(&s, 1, 1).unwrap();
        let f = b.coefficients();
        assert!((f[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(f[(1, 0)].abs() < 1e-15);
        assert!((f[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_on_construction_set() {
        let spec = GaussianMixtureSpec::random_centered(4, 3, 2).unwrap();
        let s = spec.sample(4000, 3).unwrap();
        let b = gram_schmidt_discrete(&s, 4, 3).unwrap();
        let g = b.gram(&s).unwrap();
        assert!(linalg::max_abs_identity_deviation(&g) < 1e-10);
        assert!((b.coefficients()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((0..b.len()).all(|k| b.coefficients()[(k, k)] > 0.0));
        let v = b.evaluate(s.point(5)).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn approaches_hermite_for_gaussian_samples() {
        let s = gauss_samples(1_000_000, 1, 4);
        let b = gram_schmidt_discrete(&s, 1, 3).unwrap();
        let h = DensityFamily::Gaussian.orthonormal_coefficients(3);
        for k in 0..=3 {
            for j in 0..=k {
                let dev = (b.coefficients()[(k, j)] - h[k][j]).abs();
                assert!(dev < 0.03, "row {k} col {j}: {dev}");
            }
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let s = gauss_samples(5, 2, 1);
        assert!(matches!(gram_schmidt_discrete(&s, 2, 2), Err(Error::RankDeficient(_))));
        // duplicated points make the Gram matrix singular
        let s = SampleSet::new(1, vec![1.0; 10]).unwrap();
        assert!(matches!(
            gram_schmidt_discrete(&s, 1, 2),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn quadrature_reproduces_legendre_and_chebyshev() {
        for fam in [DensityFamily::Uniform, DensityFamily::Arcsine, DensityFamily::Exponential] {
            let r1 = gauss_rule_1d(fam, 4).unwrap();
            let rule = tensor_rule(&[r1.clone(), r1], DEFAULT_NODE_CAP).unwrap();
            let b = gram_schmidt_quadrature(&rule, None, 3).unwrap();
            let c = classical(&[fam, fam], 3, None).unwrap();
            let diff = (b.coefficients() - c.coefficients()).amax();
            assert!(diff < 1e-10, "{fam}: {diff}");
        }
    }

    #[test]
    fn insufficient_exactness_rejected() {
        let r1 = gauss_rule_1d(DensityFamily::Gaussian, 2).unwrap();
        let rule = tensor_rule(&[r1.clone(), r1], DEFAULT_NODE_CAP).unwrap();
        assert!(matches!(
            gram_schmidt_quadrature(&rule, None, 2),
            Err(Error::InsufficientExactness { needed: 4, available: 3 })
        ));
    }

    #[test]
    fn rotated_gaussian_basis_is_unitarily_related() {
        let r1 = gauss_rule_1d(DensityFamily::Gaussian, 4).unwrap();
        let rule = tensor_rule(&[r1.clone(), r1], DEFAULT_NODE_CAP).unwrap();
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let q = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let psi = gram_schmidt_quadrature(&rule, Some(&q), 3).unwrap();
        let phi = classical(&[DensityFamily::Gaussian; 2], 3, None).unwrap();
        let n = psi.len();
        let mut u = DMatrix::<f64>::zeros(n, n);
        for k in 0..rule.len() {
            let z = rule.point(k);
            let xi = [c * z[0] - c * z[1], c * z[0] + c * z[1]];
            let a = phi.evaluate(z).unwrap();
            let b = psi.evaluate(&xi).unwrap();
            for i in 0..n {
                for j in 0..n {
                    u[(i, j)] += rule.weights()[k] * a[i] * b[j];
                }
            }
        }
        let dev = linalg::symmetric_spectral_norm(&(&u * u.transpose() - DMatrix::identity(n, n)));
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        let r1 = gauss_rule_1d(DensityFamily::Gaussian, 3).unwrap();
        let rule = tensor_rule(&[r1.clone(), r1], DEFAULT_NODE_CAP).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(gram_schmidt_quadrature(&rule, Some(&q), 2).is_err());
        assert!(gram_schmidt_pushforward(&rule, &q, 2).is_ok());
    }
}
