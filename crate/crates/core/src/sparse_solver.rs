//! l1 recovery: basis pursuit (`min |c|_1` s.t. `A c = b`) and basis pursuit
//! denoise (`min |c|_1` s.t. `|A c - b|_2 <= sigma`).
//!
//! Both are solved by ADMM on the splitting `x = z`, with `x` projected exactly
//! onto the constraint set through a thin SVD of `A` and `z` soft-thresholded.
//! Every few iterations the support of `z` is polished by an equality-constrained
//! least-squares solve; a polished point is returned once a dual vector proves
//! it optimal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::error::{Error, Result};
use crate::linalg::ThinSvd;
use crate::measure::{Measure, SampleSet};

/// Measurement matrix, observations and noise bound.
#[derive(Debug, Clone)]
pub struct RecoverySetup {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: f64,
    /// Description of any row or column scaling applied to `a`.
    pub normalization: String,
}

impl RecoverySetup {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, sigma: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidArgument("measurement matrix is empty".into()));
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        if let Some((i, v)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value: *v });
        }
        if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value: *v });
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument("noise bound must be finite and non-negative".into()));
        }
        Ok(Self {
            a,
            b: DVector::from_vec(b),
            sigma,
            normalization: "none".into(),
        })
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative tolerance on ADMM residuals and the duality gap.
    pub tol: f64,
    /// Iterations between support polishing attempts.
    pub polish_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tol: 1e-10,
            polish_every: 25,
        }
    }
}

/// Output of an l1 solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub c: Vec<f64>,
    pub residual_l2: f64,
    pub l1_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual vector `y` with `|A^T y|_inf <= 1`.
    pub dual: Vec<f64>,
    /// `|c|_1 - (b^T y - sigma |y|_2)`.
    pub duality_gap: f64,
}

/// `A[i][j] = psi_j(x_i)`.
pub fn assemble_measurement_matrix(basis: &PolynomialBasis, training: &SampleSet) -> Result<DMatrix<f64>> {
    if training.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: training.dim(),
        });
    }
    basis.evaluate_matrix(training)
}

/// Dispatches on `sigma`: basis pursuit when zero, denoising otherwise.
pub fn solve(setup: &RecoverySetup, opts: &SolverOptions) -> Result<RecoveryResult> {
    Admm::new(setup, opts)?.run()
}

/// Basis pursuit; `setup.sigma` is ignored.
pub fn basis_pursuit(setup: &RecoverySetup, opts: &SolverOptions) -> Result<RecoveryResult> {
    let mut s = setup.clone();
    s.sigma = 0.0;
    solve(&s, opts)
}

/// Basis pursuit denoise with bound `setup.sigma`.
pub fn bpdn(setup: &RecoverySetup, opts: &SolverOptions) -> Result<RecoveryResult> {
    solve(setup, opts)
}

/// `(sum w (f - g)^2 / sum w f^2)^{1/2}`.
pub fn relative_l2_error(truth: &[f64], approx: &[f64], weights: &[f64]) -> Result<f64> {
    if truth.len() != approx.len() || truth.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: approx.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((f, g), w) in truth.iter().zip(approx).zip(weights) {
        num += w * (f - g) * (f - g);
        den += w * f * f;
    }
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("reference values vanish on the evaluation set".into()));
    }
    Ok((num / den).sqrt())
}

/// `|c - c_ref|_1 / |c_ref|_1`.
pub fn relative_l1_error(c: &[f64], reference: &[f64]) -> Result<f64> {
    let den: f64 = reference.iter().map(|v| v.abs()).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("reference coefficients vanish".into()));
    }
    let num: f64 = c.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / den)
}

const MAX_RHO_UPDATES: usize = 40;

struct Admm<'a> {
    setup: &'a RecoverySetup,
    opts: &'a SolverOptions,
    svd: ThinSvd,
    // min-norm least-squares solution
    x_ls: DVector<f64>,
    // U^T b
    beta: DVector<f64>,
    // |b - U U^T b|
    b_perp: f64,
}

impl<'a> Admm<'a> {
    fn new(setup: &'a RecoverySetup, opts: &'a SolverOptions) -> Result<Self> {
        let svd = ThinSvd::new(&setup.a)?;
        let beta = svd.u.transpose() * &setup.b;
        let b_perp = (&setup.b - &svd.u * &beta).norm();
        let scaled = beta.component_div(&svd.s);
        let x_ls = &svd.v * scaled;
        Ok(Self {
            setup,
            opts,
            svd,
            x_ls,
            beta,
            b_perp,
        })
    }

    fn sigma(&self) -> f64 {
        self.setup.sigma
    }

    fn result(&self, c: Vec<f64>, y: DVector<f64>, iterations: usize, converged: bool) -> RecoveryResult {
        let cv = DVector::from_column_slice(&c);
        let residual_l2 = (&self.setup.a * &cv - &self.setup.b).norm();
        let l1_norm: f64 = c.iter().map(|v| v.abs()).sum();
        let duality_gap = l1_norm - (self.setup.b.dot(&y) - self.sigma() * y.norm());
        RecoveryResult {
            c,
            residual_l2,
            l1_norm,
            iterations,
            converged,
            dual: y.iter().copied().collect(),
            duality_gap,
        }
    }

    fn run(&self) -> Result<RecoveryResult> {
        let n = self.setup.a.ncols();
        let m = self.setup.a.nrows();
        let bnorm = self.setup.b.norm();
        let sigma = self.sigma();
        if sigma == 0.0 {
            if self.b_perp > 1e-9 * (1.0 + bnorm) {
                return Err(Error::Infeasible {
                    residual: self.b_perp,
                    bound: 0.0,
                });
            }
        } else if self.b_perp > sigma {
            return Err(Error::Infeasible {
                residual: self.b_perp,
                bound: sigma,
            });
        }
        if bnorm <= sigma || bnorm == 0.0 {
            return Ok(self.result(vec![0.0; n], DVector::zeros(m), 0, true));
        }

        let tol = self.opts.tol;
        let ls_norm = self.x_ls.norm().max(f64::MIN_POSITIVE);
        let mut rho = (n as f64).sqrt() / ls_norm;
        let mut z = DVector::<f64>::zeros(n);
        let mut u = DVector::<f64>::zeros(n);
        let mut x = DVector::<f64>::zeros(n);
        let mut best: Option<(Vec<f64>, DVector<f64>)> = None;
        let mut rho_updates = 0;
        for it in 1..=self.opts.max_iter {
            let v = &z - &u;
            x = self.project(&v);
            let z_old = z.clone();
            let w = &x + &u;
            let thresh = 1.0 / rho;
            z = w.map(|t| soft(t, thresh));
            u += &x - &z;

            if it % self.opts.polish_every == 0 {
                if let Some((c, y)) = self.polish(&z) {
                    return Ok(self.result(c, y, it, true));
                }
            }
            if it % 10 == 0 {
                let r = (&x - &z).norm();
                let s = rho * (&z - &z_old).norm();
                let scale = 1.0 + x.norm().max(z.norm());
                if r <= tol * scale && s <= tol * scale * rho.max(1.0) {
                    if let Some((c, y)) = self.polish(&z) {
                        return Ok(self.result(c, y, it, true));
                    }
                    let y = self.dual_from_multiplier(&(&u * rho));
                    let c: Vec<f64> = x.iter().copied().collect();
                    let res = self.result(c.clone(), y.clone(), it, false);
                    if res.duality_gap.abs() <= 1e-8 * (1.0 + res.l1_norm) {
                        return Ok(RecoveryResult {
                            converged: true,
                            ..res
                        });
                    }
                    best = Some((c, y));
                }
                // residual balancing, frozen after a fixed number of updates so it cannot cycle
                if rho_updates < MAX_RHO_UPDATES {
                    if r > 10.0 * s {
                        rho *= 2.0;
                        u /= 2.0;
                        rho_updates += 1;
                    } else if s > 10.0 * r {
                        rho /= 2.0;
                        u *= 2.0;
                        rho_updates += 1;
                    }
                }
            }
        }
        let (c, y) = best.unwrap_or_else(|| {
            let y = self.dual_from_multiplier(&(&u * rho));
            (x.iter().copied().collect(), y)
        });
        Ok(self.result(c, y, self.opts.max_iter, false))
    }

    // Euclidean projection onto the feasible set.
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let vt_v = self.svd.v.transpose() * v;
        if self.sigma() == 0.0 {
            return v - &self.svd.v * vt_v + &self.x_ls;
        }
        // residual components in the column space of A
        let s = &self.svd.s;
        let e = s.component_mul(&vt_v) - &self.beta;
        let sigma2 = self.sigma() * self.sigma();
        let perp2 = self.b_perp * self.b_perp;
        let r0: f64 = e.norm_squared() + perp2;
        if r0 <= sigma2 {
            return v.clone();
        }
        let lam = secular_root(&e, s, perp2, sigma2);
        let alpha = DVector::from_iterator(
            s.len(),
            e.iter()
                .zip(s.iter())
                .map(|(ei, si)| -lam * si * ei / (1.0 + lam * si * si)),
        );
        v + &self.svd.v * alpha
    }

    // Least-squares `y` with `A^T y` close to `lambda`, rescaled to be dual feasible.
    fn dual_from_multiplier(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let coef = (self.svd.v.transpose() * lambda).component_div(&self.svd.s);
        let mut y = &self.svd.u * coef;
        let aty = self.setup.a.transpose() * &y;
        let inf = aty.amax();
        if inf > 1.0 {
            y /= inf;
        }
        y
    }

    // Support polishing with an optimality certificate.
    fn polish(&self, z: &DVector<f64>) -> Option<(Vec<f64>, DVector<f64>)> {
        let a = &self.setup.a;
        let (m, n) = (a.nrows(), a.ncols());
        let support: Vec<usize> = (0..n).filter(|&i| z[i] != 0.0).collect();
        let t = support.len();
        if t == 0 || t > m {
            return None;
        }
        let at = DMatrix::from_fn(m, t, |i, j| a[(i, support[j])]);
        let gram = at.transpose() * &at;
        let chol = gram.clone().cholesky()?;
        let signs = DVector::from_iterator(t, support.iter().map(|&i| z[i].signum()));
        let c_ls = chol.solve(&(at.transpose() * &self.setup.b));
        let r0 = &at * &c_ls - &self.setup.b;
        let bnorm = self.setup.b.norm();
        let (ct, y) = if self.sigma() == 0.0 {
            if r0.norm() > 1e-10 * (1.0 + bnorm) {
                return None;
            }
            // least-norm y with A_T^T y = s
            let y = &at * chol.solve(&signs);
            (c_ls, y)
        } else {
            let sigma = self.sigma();
            let w = &at * chol.solve(&signs);
            let wn2 = w.norm_squared();
            let slack = sigma * sigma - r0.norm_squared();
            if !(slack > 0.0) || !(wn2 > 0.0) {
                return None;
            }
            let mu = (slack / wn2).sqrt();
            let ct = &c_ls - chol.solve(&signs) * mu;
            // y = -(r0 - mu w) / mu; a square support has r0 = 0 up to roundoff
            let y = if t == m { w } else { w - r0 / mu };
            (ct, y)
        };
        if ct.iter().zip(signs.iter()).any(|(c, s)| c * s <= 0.0) {
            return None;
        }
        let aty = a.transpose() * &y;
        if aty.amax() > 1.0 + 1e-9 {
            return None;
        }
        let mut c = vec![0.0; n];
        for (j, &i) in support.iter().enumerate() {
            c[i] = ct[j];
        }
        let res = self.result(c.clone(), y.clone(), 0, true);
        if res.duality_gap.abs() > 1e-9 * (1.0 + res.l1_norm) {
            return None;
        }
        if self.sigma() > 0.0 && res.residual_l2 > self.sigma() * (1.0 + 1e-9) + 1e-13 * (1.0 + bnorm) {
            return None;
        }
        Some((c, y))
    }
}

fn soft(t: f64, thresh: f64) -> f64 {
    if t > thresh {
        t - thresh
    } else if t < -thresh {
        t + thresh
    } else {
        0.0
    }
}

// Smallest `lam > 0` with `sum (e_i / (1 + lam s_i^2))^2 + perp2 <= target`, given that it fails at zero.
// Newton on `1/|r(lam)| - 1/sqrt(target)`, which is nearly linear in `lam`, safeguarded by bisection.
fn secular_root(e: &DVector<f64>, s: &DVector<f64>, perp2: f64, target: f64) -> f64 {
    let eval = |lam: f64| -> (f64, f64) {
        let mut r2 = perp2;
        let mut dr2 = 0.0;
        for (ei, si) in e.iter().zip(s.iter()) {
            let q = 1.0 / (1.0 + lam * si * si);
            r2 += ei * ei * q * q;
            dr2 -= 2.0 * ei * ei * si * si * q * q * q;
        }
        (r2, dr2)
    };
    let inv_t = 1.0 / target.sqrt();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while eval(hi).0 > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return hi;
        }
    }
    let mut lam = hi;
    for _ in 0..300 {
        let (r2, dr2) = eval(lam);
        let g = 1.0 / r2.sqrt() - inv_t;
        if g < 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        if g.abs() <= 1e-14 * inv_t || hi - lo <= 1e-15 * hi {
            break;
        }
        let dg = -0.5 * dr2 / (r2 * r2.sqrt());
        let newton = lam - g / dg;
        lam = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // keep the projected point feasible
    if eval(lam).0 > target {
        hi
    } else {
        lam
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_matrix(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn certificate_holds(setup: &RecoverySetup, r: &RecoveryResult) {
        let y = DVector::from_column_slice(&r.dual);
        let aty = setup.a.transpose() * &y;
        assert!(aty.amax() <= 1.0 + 1e-6, "{}", aty.amax());
        let dual_obj = setup.b.dot(&y) - setup.sigma * y.norm();
        assert!(dual_obj >= r.l1_norm - 1e-6);
    }

    #[test]
    fn identity_system() {
        let b = vec![1.5, -2.0, 0.0, 3.0];
        let setup = RecoverySetup::new(DMatrix::identity(4, 4), b.clone(), 0.0).unwrap();
        let r = basis_pursuit(&setup, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        for (c, e) in r.c.iter().zip(&b) {
            assert!((c - e).abs() < 1e-12);
        }
        certificate_holds(&setup, &r);
    }

    #[test]
    fn degenerate_tie_reaches_optimal_value() {
        let setup = RecoverySetup::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![2.0], 0.0).unwrap();
        let r = basis_pursuit(&setup, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.l1_norm - 2.0).abs() < 1e-8);
        assert!((r.c[0] + r.c[1] - 2.0).abs() < 1e-10);
        certificate_holds(&setup, &r);
    }

    #[test]
    fn infeasible_system_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let setup = RecoverySetup::new(a, vec![1.0, 2.0], 0.0).unwrap();
        assert!(matches!(
            basis_pursuit(&setup, &SolverOptions::default()),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn large_noise_bound_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_matrix(5, 12, &mut rng);
        let b: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let setup = RecoverySetup::new(a, b, bn).unwrap();
        let r = bpdn(&setup, &SolverOptions::default()).unwrap();
        assert!(r.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recovers_sparse_vector_with_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, n) = (20, 60);
        let a = gaussian_matrix(m, n, &mut rng);
        let mut c0 = vec![0.0; n];
        c0[3] = 1.0;
        c0[17] = -2.0;
        c0[41] = 0.5;
        let b = (&a * DVector::from_column_slice(&c0)).iter().copied().collect();
        let setup = RecoverySetup::new(a, b, 0.0).unwrap();
        let r = basis_pursuit(&setup, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        assert!(relative_l1_error(&r.c, &c0).unwrap() < 1e-10);
        certificate_holds(&setup, &r);
    }

    #[test]
    fn zero_noise_limit_matches_basis_pursuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, n) = (15, 40);
        let a = gaussian_matrix(m, n, &mut rng);
        let b: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let bp = basis_pursuit(&RecoverySetup::new(a.clone(), b.clone(), 0.0).unwrap(), &SolverOptions::default())
            .unwrap();
        let dn = bpdn(&RecoverySetup::new(a, b, 1e-9).unwrap(), &SolverOptions::default()).unwrap();
        let diff: f64 = bp.c.iter().zip(&dn.c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn bpdn_norm_decreases_along_sigma_ladder() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (m, n) = (12, 30);
        let a = gaussian_matrix(m, n, &mut rng);
        let b: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut last = f64::INFINITY;
        for sigma in [0.0, 0.01, 0.1, 0.5, 1.0, 2.0] {
            let setup = RecoverySetup::new(a.clone(), b.clone(), sigma).unwrap();
            let r = solve(&setup, &SolverOptions::default()).unwrap();
            assert!(r.converged);
            assert!(r.residual_l2 <= sigma + 1e-8);
            assert!(r.duality_gap.abs() <= 1e-8 * (1.0 + r.l1_norm), "{}", r.duality_gap);
            assert!(r.l1_norm <= last + 1e-9);
            certificate_holds(&setup, &r);
            last = r.l1_norm;
        }
    }

    #[test]
    fn relative_errors() {
        let f = [1.0, -2.0, 0.5];
        let w = [1.0 / 3.0; 3];
        assert_eq!(relative_l2_error(&f, &f, &w).unwrap(), 0.0);
        assert!((relative_l2_error(&f, &[0.0; 3], &w).unwrap() - 1.0).abs() < 1e-15);
        let twice: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert!((relative_l2_error(&f, &twice, &w).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l2_error(&[0.0; 3], &f, &w).is_err());
    }

    #[test]
    fn result_serializes_with_expected_fields() {
        let setup = RecoverySetup::new(DMatrix::identity(2, 2), vec![1.0, 0.0], 0.0).unwrap();
        let r = basis_pursuit(&setup, &SolverOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["c", "residual_l2", "l1_norm", "iterations", "converged"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn solutions_are_feasible_and_certified(seed in 0u64..10_000, m in 4usize..14, extra in 1usize..20, noise in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = m + extra;
            let a = gaussian_matrix(m, n, &mut rng);
            let b: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let sigma = [0.0, 1e-6, 0.3][noise];
            let setup = RecoverySetup::new(a, b, sigma).unwrap();
            let r = solve(&setup, &SolverOptions::default()).unwrap();
            proptest::prop_assert!(r.converged);
            proptest::prop_assert!(r.residual_l2 <= sigma + 1e-8 * (1.0 + setup.b.norm()));
            proptest::prop_assert!(r.duality_gap.abs() <= 1e-8 * (1.0 + r.l1_norm));
            certificate_holds(&setup, &r);
        }
    }
}
