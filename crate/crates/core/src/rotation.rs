//! Sparsity-enhancing input rotation and the two surrogate pipelines.
//!
//! A fitted surrogate defines `G = E[grad f grad f^T]`; its eigenvectors `Q`
//! give new coordinates `chi = Q^T xi` in which the expansion concentrates on
//! fewer terms. The discrete pipeline rebuilds the data-driven basis on the
//! rotated samples; the density pipeline rebuilds it on the rotated quadrature.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{
    classical, gram_schmidt_discrete, gram_schmidt_pushforward, near_orthonormal, BasisFile, InputScaling,
    NearMode, PolynomialBasis,
};
use crate::error::{Error, Result};
use crate::linalg::{max_abs_identity_deviation, symmetrize, weighted_gram};
use crate::measure::{smolyak_rule_mixed, DensityFamily, Measure, QuadratureRule, SampleSet, DEFAULT_NODE_CAP};
use crate::sparse_solver::{assemble_measurement_matrix, solve, RecoveryResult, RecoverySetup, SolverOptions};

/// Solver statistics attached to a surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMeta {
    pub m: usize,
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_l2: f64,
    pub l1_norm: f64,
}

impl FitMeta {
    fn from_result(m: usize, sigma: f64, r: &RecoveryResult) -> Self {
        Self {
            m,
            sigma,
            iterations: r.iterations,
            converged: r.converged,
            residual_l2: r.residual_l2,
            l1_norm: r.l1_norm,
        }
    }
}

/// `f(xi) = c^T Psi(Q^T xi)`.
#[derive(Debug, Clone)]
pub struct Surrogate {
    basis: PolynomialBasis,
    c: Vec<f64>,
    rotation: DMatrix<f64>,
    meta: FitMeta,
}

impl Surrogate {
    pub fn new(basis: PolynomialBasis, c: Vec<f64>, rotation: Option<DMatrix<f64>>, meta: FitMeta) -> Result<Self> {
        let d = basis.dim();
        if c.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: c.len(),
            });
        }
        let rotation = rotation.unwrap_or_else(|| DMatrix::identity(d, d));
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: rotation.nrows(),
            });
        }
        let dev = max_abs_identity_deviation(&(rotation.transpose() * &rotation));
        if dev > 1e-10 {
            return Err(Error::InvalidArgument(format!("rotation is not orthogonal (deviation {dev:.2e})")));
        }
        Ok(Self {
            basis,
            c,
            rotation,
            meta,
        })
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `chi = Q^T xi`.
    pub fn rotate_point(&self, xi: &[f64], chi: &mut [f64]) {
        rotate_into(&self.rotation, xi, chi);
    }

    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: xi.len(),
            });
        }
        let mut chi = vec![0.0; xi.len()];
        self.rotate_point(xi, &mut chi);
        let psi = self.basis.evaluate(&chi)?;
        Ok(psi.iter().zip(&self.c).map(|(a, b)| a * b).sum())
    }

    /// Values at every point of `m`, in point order.
    pub fn evaluate_set<M: Measure + ?Sized>(&self, m: &M) -> Result<Vec<f64>> {
        let rotated = rotate_measure_points(m, &self.rotation)?;
        let a = self.basis.evaluate_matrix(&rotated)?;
        let c = nalgebra::DVector::from_column_slice(&self.c);
        Ok((a * c).iter().copied().collect())
    }

    /// Relative weighted l2 error against paired truth values on `m`.
    pub fn relative_l2_error<M: Measure + ?Sized>(&self, m: &M, truth: &[f64]) -> Result<f64> {
        let approx = self.evaluate_set(m)?;
        crate::sparse_solver::relative_l2_error(truth, &approx, m.weights())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SurrogateFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<SurrogateFile>(text)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateFile {
    pub basis: BasisFile,
    /// `Q` row by row.
    pub rotation: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub meta: FitMeta,
}

impl From<&Surrogate> for SurrogateFile {
    fn from(s: &Surrogate) -> Self {
        let d = s.rotation.nrows();
        Self {
            basis: BasisFile::from(&s.basis),
            rotation: (0..d).map(|i| s.rotation.row(i).iter().copied().collect()).collect(),
            coefficients: s.c.clone(),
            meta: s.meta.clone(),
        }
    }
}

impl TryFrom<SurrogateFile> for Surrogate {
    type Error = Error;

    fn try_from(f: SurrogateFile) -> Result<Self> {
        let basis = PolynomialBasis::try_from(f.basis)?;
        let d = basis.dim();
        if f.rotation.len() != d || f.rotation.iter().any(|r| r.len() != d) {
            return Err(Error::Parse(format!("rotation must be {d} x {d}")));
        }
        let q = DMatrix::from_fn(d, d, |i, j| f.rotation[i][j]);
        Surrogate::new(basis, f.coefficients, Some(q), f.meta)
    }
}

fn rotate_into(q: &DMatrix<f64>, xi: &[f64], chi: &mut [f64]) {
    let d = xi.len();
    for (j, c) in chi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += q[(i, j)] * xi[i];
        }
        *c = acc;
    }
}

fn rotate_measure_points<M: Measure + ?Sized>(m: &M, q: &DMatrix<f64>) -> Result<SampleSet> {
    let d = m.dim();
    let mut pts = vec![0.0; m.len() * d];
    for k in 0..m.len() {
        rotate_into(q, m.point(k), &mut pts[k * d..(k + 1) * d]);
    }
    SampleSet::with_weights(d, pts, m.weights().to_vec())
}

/// Sample set of `chi = Q^T xi`, keeping weights.
pub fn rotate_samples(s: &SampleSet, q: &DMatrix<f64>) -> Result<SampleSet> {
    if q.nrows() != s.dim() || q.ncols() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            found: q.nrows(),
        });
    }
    rotate_measure_points(s, q)
}

/// `G = E_m[grad f grad f^T]` in the original coordinates.
///
/// The gradient of the expansion is a polynomial of degree `p - 1` whose monomial
/// coefficients come from [`crate::basis::BasisGradient`], so `G` follows from the
/// monomial Gram matrix of the rotated points without differencing.
pub fn gradient_matrix<M: Measure + ?Sized>(s: &Surrogate, m: &M) -> Result<DMatrix<f64>> {
    let d = s.dim();
    if m.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: m.dim(),
        });
    }
    let grad = s.basis.gradient()?;
    let coeffs = grad.contract(&s.c);
    let width = grad.lower_index().len();
    let gram = weighted_gram(m.len(), width, m.weights(), |k, row| {
        let mut chi = vec![0.0; d];
        rotate_into(&s.rotation, m.point(k), &mut chi);
        grad.lower_monomials(&chi, row);
    });
    // G_chi[j][l] = g_j^T Gram g_l
    let gm = DMatrix::from_fn(width, d, |r, j| coeffs[j][r]);
    let mut g_chi = gm.transpose() * &gram * &gm;
    symmetrize(&mut g_chi);
    let mut g = &s.rotation * g_chi * s.rotation.transpose();
    symmetrize(&mut g);
    Ok(g)
}

/// Eigendecomposition `G = Q K Q^T` with `K` descending.
///
/// Each column of `Q` has its largest-magnitude entry positive; eigenvalues equal to
/// within `1e-12` of the largest are ordered by the position of that entry.
pub fn rotation_from_gradient(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = g.nrows();
    if g.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: g.ncols(),
        });
    }
    let mut sym = g.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("gradient matrix".into()))?;
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut cols: Vec<(f64, usize, nalgebra::DVector<f64>)> = (0..d)
        .map(|i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let arg = v.iamax();
            if v[arg] < 0.0 {
                v = -v;
            }
            (eig.eigenvalues[i], arg, v)
        })
        .collect();
    cols.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-12 * scale {
            a.1.cmp(&b.1)
        } else {
            b.0.total_cmp(&a.0)
        }
    });
    let k = cols.iter().map(|c| c.0).collect();
    let q = DMatrix::from_columns(&cols.into_iter().map(|c| c.2).collect::<Vec<_>>());
    Ok((q, k))
}

/// Input scaling used with classical tensor bases on sample data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Each coordinate mapped onto `[-1, 1]` from the sample range.
    #[default]
    MinMax,
    /// Each coordinate standardized to zero mean and unit variance.
    Standardize,
    None,
}

/// Basis recipe for the discrete pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisKind {
    /// Exactly orthonormal on the sample set.
    Exact,
    /// Near-orthonormal with cross-validated tolerances.
    Near {
        #[serde(default)]
        mode: NearMode,
    },
    /// Tensor product of one classical family, applied to (scaled) coordinates.
    Classical {
        family: DensityFamily,
        #[serde(default)]
        scaling: ScalingMode,
    },
}

impl BasisKind {
    pub fn label(&self) -> String {
        match self {
            BasisKind::Exact => "exact".into(),
            BasisKind::Near { mode } => format!("near-{}", mode.name()),
            BasisKind::Classical { family, .. } => family.polynomial_name().to_lowercase(),
        }
    }

    /// Builds the basis on the construction set `s`.
    pub fn build(&self, s: &SampleSet, p: usize) -> Result<PolynomialBasis> {
        let d = s.dim();
        match self {
            BasisKind::Exact => gram_schmidt_discrete(s, d, p),
            BasisKind::Near { mode } => Ok(near_orthonormal(s, d, p, *mode)?.basis),
            BasisKind::Classical { family, scaling } => {
                let sc = match scaling {
                    ScalingMode::MinMax => Some(InputScaling::min_max(s)?),
                    ScalingMode::Standardize => Some(InputScaling::standardize(s)?),
                    ScalingMode::None => None,
                };
                classical(&vec![*family; d], p, sc)
            }
        }
    }
}

/// Options shared by both pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub p: usize,
    pub sigma: f64,
    pub solver: SolverOptions,
    /// Number of rotate-and-refit rounds; zero disables rotation.
    pub rotations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            p: 2,
            sigma: 0.0,
            solver: SolverOptions::default(),
            rotations: 1,
        }
    }
}

/// Unrotated fit and one rotated fit per round.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub unrotated: Surrogate,
    pub rotated: Vec<Surrogate>,
}

impl PipelineResult {
    /// The last fit produced.
    pub fn final_surrogate(&self) -> &Surrogate {
        self.rotated.last().unwrap_or(&self.unrotated)
    }
}

fn fit_with_basis(
    basis: PolynomialBasis,
    training: &SampleSet,
    values: &[f64],
    q: Option<DMatrix<f64>>,
    opts: &FitOptions,
) -> Result<Surrogate> {
    let pts = match &q {
        Some(q) => rotate_samples(training, q)?,
        None => training.clone(),
    };
    let a = assemble_measurement_matrix(&basis, &pts)?;
    let setup = RecoverySetup::new(a, values.to_vec(), opts.sigma)?;
    let r = solve(&setup, &opts.solver)?;
    let meta = FitMeta::from_result(training.len(), opts.sigma, &r);
    Surrogate::new(basis, r.c, q, meta)
}

fn check_training(training: &SampleSet, values: &[f64], d: usize) -> Result<()> {
    if training.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: training.dim(),
        });
    }
    if values.len() != training.len() {
        return Err(Error::DimensionMismatch {
            expected: training.len(),
            found: values.len(),
        });
    }
    Ok(())
}

/// Surrogate from a construction sample set and paired training data.
///
/// Builds the basis on `s`, fits by l1 minimization, forms `G` on `s`, rotates both
/// sets by `Q^T`, rebuilds the basis on the rotated construction set and refits;
/// the last three steps repeat `opts.rotations` times.
pub fn fit_discrete(
    s: &SampleSet,
    training: &SampleSet,
    values: &[f64],
    kind: &BasisKind,
    opts: &FitOptions,
) -> Result<PipelineResult> {
    let basis = kind.build(s, opts.p)?;
    fit_discrete_from(s, basis, training, values, kind, opts)
}

/// [`fit_discrete`] with the unrotated basis already built on `s`.
pub fn fit_discrete_from(
    s: &SampleSet,
    basis: PolynomialBasis,
    training: &SampleSet,
    values: &[f64],
    kind: &BasisKind,
    opts: &FitOptions,
) -> Result<PipelineResult> {
    check_training(training, values, s.dim())?;
    let unrotated = fit_with_basis(basis, training, values, None, opts)?;
    let mut rotated = Vec::with_capacity(opts.rotations);
    let mut current = unrotated.clone();
    for _ in 0..opts.rotations {
        if opts.p == 0 {
            break;
        }
        let g = gradient_matrix(&current, s)?;
        let (q, _) = rotation_from_gradient(&g)?;
        let rs = rotate_samples(s, &q)?;
        let basis = kind.build(&rs, opts.p)?;
        let next = fit_with_basis(basis, training, values, Some(q), opts)?;
        rotated.push(next.clone());
        current = next;
    }
    Ok(PipelineResult { unrotated, rotated })
}

/// How the rotated fit of the density pipeline represents `f(chi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityRefit {
    /// Basis rebuilt to be orthonormal for the rotated measure.
    #[default]
    Rebuild,
    /// The original tensor basis applied to `chi`.
    Reuse,
}

/// Surrogate for inputs with a known product density.
///
/// Fits with the classical tensor basis, forms `G` by sparse-grid quadrature of the
/// density, rotates, rebuilds the basis orthonormal for the pushforward measure of
/// `chi = Q^T xi` and refits.
pub fn fit_density(
    training: &SampleSet,
    values: &[f64],
    families: &[DensityFamily],
    opts: &FitOptions,
    refit: DensityRefit,
    level: Option<usize>,
) -> Result<PipelineResult> {
    let rule = density_rule(families, opts.p, level)?;
    let basis = classical(families, opts.p, None)?;
    fit_density_from(&rule, basis, training, values, opts, refit)
}

/// Sparse-grid rule for the gradient matrix of a degree-`p` expansion.
///
/// The level defaults to `p`; the rule must integrate degree `2p` exactly so the
/// rebuilt basis is orthonormal.
pub fn density_rule(families: &[DensityFamily], p: usize, level: Option<usize>) -> Result<QuadratureRule> {
    let rule = smolyak_rule_mixed(families, level.unwrap_or(p), DEFAULT_NODE_CAP)?;
    if rule.exactness() < 2 * p {
        return Err(Error::InsufficientExactness {
            needed: 2 * p,
            available: rule.exactness(),
        });
    }
    Ok(rule)
}

/// [`fit_density`] with the rule and unrotated classical basis already built.
pub fn fit_density_from(
    rule: &QuadratureRule,
    basis: PolynomialBasis,
    training: &SampleSet,
    values: &[f64],
    opts: &FitOptions,
    refit: DensityRefit,
) -> Result<PipelineResult> {
    check_training(training, values, rule.dim())?;
    let p = opts.p;
    let unrotated = fit_with_basis(basis.clone(), training, values, None, opts)?;
    let mut rotated = Vec::with_capacity(opts.rotations);
    let mut current = unrotated.clone();
    for _ in 0..opts.rotations {
        if p == 0 {
            break;
        }
        let g = gradient_matrix(&current, rule)?;
        let (q, _) = rotation_from_gradient(&g)?;
        let next_basis = match refit {
            DensityRefit::Rebuild => rebuild_for_rotation(rule, &q, p)?,
            DensityRefit::Reuse => basis.clone(),
        };
        let next = fit_with_basis(next_basis, training, values, Some(q), opts)?;
        rotated.push(next.clone());
        current = next;
    }
    Ok(PipelineResult { unrotated, rotated })
}

/// Basis orthonormal for `chi = Q^T xi` with `xi` distributed per `rule`.
pub fn rebuild_for_rotation(rule: &QuadratureRule, q: &DMatrix<f64>, p: usize) -> Result<PolynomialBasis> {
    gram_schmidt_pushforward(rule, &q.transpose(), p)
}
