//! Polynomial bases stored as triangular stacks of monomial coefficients.
//!
//! Row `k` of the coefficient matrix holds the monomial coefficients of
//! `psi_k`; entries beyond column `k` are zero, so each basis function only
//! uses monomials that precede or equal its own index in graded-lex order.

mod classical;
mod gradient;
mod near;
mod orthonormal;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DensityFamily, Measure};
use crate::multi_index::MultiIndexSet;
use crate::par;

pub use classical::classical;
pub use gradient::BasisGradient;
pub use near::{
    cross_validation_zeta, near_orthonormal, near_orthonormal_with_zeta, NearMode, NearReport,
};
pub use orthonormal::{
    gram_schmidt_discrete, gram_schmidt_pushforward, gram_schmidt_quadrature, orthonormalize,
    CONDITION_LIMIT,
};

/// How a basis was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ExactDiscrete,
    ExactQuadrature,
    NearOrthonormal { mode: NearMode },
    Classical { families: Vec<DensityFamily> },
}

impl Provenance {
    pub fn label(&self) -> String {
        match self {
            Provenance::ExactDiscrete => "exact_discrete".into(),
            Provenance::ExactQuadrature => "exact_quadrature".into(),
            Provenance::NearOrthonormal { mode } => format!("near_orthonormal_{}", mode.name()),
            Provenance::Classical { families } => {
                let mut names: Vec<&str> = families.iter().map(|f| f.polynomial_name()).collect();
                names.dedup();
                format!("classical_{}", names.join("_"))
            }
        }
    }
}

/// Per-coordinate affine change of variables `chi_j = (x_j - center_j) / scale_j`
/// applied before the polynomials are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.center[j]) / self.scale[j];
        }
    }

    /// Maps the per-coordinate range of `m` onto `[-1, 1]`.
    pub fn min_max<M: Measure + ?Sized>(m: &M) -> Result<Self> {
        let d = m.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for k in 0..m.len() {
            for (j, &x) in m.point(k).iter().enumerate() {
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
        }
        let mut center = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for j in 0..d {
            let half = 0.5 * (hi[j] - lo[j]);
            if !(half > 0.0) {
                return Err(Error::RankDeficient(format!("coordinate {j} is constant")));
            }
            center.push(0.5 * (hi[j] + lo[j]));
            scale.push(half);
        }
        Ok(Self { center, scale })
    }

    /// Centres each coordinate and scales it to unit variance.
    pub fn standardize<M: Measure + ?Sized>(m: &M) -> Result<Self> {
        let d = m.dim();
        let w = m.weights();
        let mut mean = vec![0.0; d];
        for k in 0..m.len() {
            for (j, &x) in m.point(k).iter().enumerate() {
                mean[j] += w[k] * x;
            }
        }
        let mut var = vec![0.0; d];
        for k in 0..m.len() {
            for (j, &x) in m.point(k).iter().enumerate() {
                var[j] += w[k] * (x - mean[j]).powi(2);
            }
        }
        if let Some(j) = var.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::RankDeficient(format!("coordinate {j} has zero variance")));
        }
        Ok(Self {
            center: mean,
            scale: var.iter().map(|v| v.sqrt()).collect(),
        })
    }
}

/// Polynomial basis `Psi(x) = F m(x)` with `m` the graded-lex monomial vector.
#[derive(Debug, Clone)]
pub struct PolynomialBasis {
    index: MultiIndexSet,
    coeffs: DMatrix<f64>,
    provenance: Provenance,
    scaling: Option<InputScaling>,
    fallback_rows: Vec<usize>,
}

impl PartialEq for PolynomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
            && self.coeffs == other.coeffs
            && self.provenance == other.provenance
            && self.scaling == other.scaling
            && self.fallback_rows == other.fallback_rows
    }
}

impl PolynomialBasis {
    /// Wraps a lower-triangular coefficient matrix with a nonzero diagonal.
    pub fn new(
        index: MultiIndexSet,
        coeffs: DMatrix<f64>,
        provenance: Provenance,
        scaling: Option<InputScaling>,
    ) -> Result<Self> {
        let n = index.len();
        if coeffs.nrows() != n || coeffs.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: coeffs.nrows(),
            });
        }
        for k in 0..n {
            if coeffs[(k, k)] == 0.0 || !coeffs[(k, k)].is_finite() {
                return Err(Error::InvalidArgument(format!("zero leading coefficient in row {k}")));
            }
            for j in (k + 1)..n {
                if coeffs[(k, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "row {k} has a coefficient beyond its own monomial"
                    )));
                }
            }
        }
        if let Some(s) = &scaling {
            if s.center.len() != index.dim() || s.scale.len() != index.dim() {
                return Err(Error::DimensionMismatch {
                    expected: index.dim(),
                    found: s.center.len(),
                });
            }
        }
        Ok(Self {
            index,
            coeffs,
            provenance,
            scaling,
            fallback_rows: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn degree(&self) -> usize {
        self.index.degree()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index
    }

    /// Monomial coefficient matrix, one basis function per row.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn scaling(&self) -> Option<&InputScaling> {
        self.scaling.as_ref()
    }

    /// Rows that a near-orthonormal construction replaced by the exact row.
    pub fn fallback_rows(&self) -> &[usize] {
        &self.fallback_rows
    }

    pub(crate) fn set_fallback_rows(&mut self, rows: Vec<usize>) {
        self.fallback_rows = rows;
    }

    /// Writes the (scaled) monomial vector of `x` into `mono`.
    pub fn monomials_into(&self, x: &[f64], scratch: &mut [f64], mono: &mut [f64]) {
        match &self.scaling {
            Some(s) => {
                s.apply(x, scratch);
                self.index.monomials_into(scratch, mono);
            }
            None => self.index.monomials_into(x, mono),
        }
    }

    /// Evaluates every basis function at `x`.
    pub fn evaluate_into(&self, x: &[f64], mono: &mut [f64], out: &mut [f64]) {
        let mut scratch = [0.0; 64];
        let d = self.dim();
        if d <= scratch.len() {
            self.monomials_into(x, &mut scratch[..d], mono);
        } else {
            let mut heap = vec![0.0; d];
            self.monomials_into(x, &mut heap, mono);
        }
        let n = self.len();
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.coeffs[(k, j)] * mono[j];
            }
            *o = acc;
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let n = self.len();
        let mut mono = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.evaluate_into(x, &mut mono, &mut out);
        Ok(out)
    }

    /// Basis values at every point of `m`, one row per point.
    pub fn evaluate_matrix<M: Measure + ?Sized>(&self, m: &M) -> Result<DMatrix<f64>> {
        if m.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        let n = self.len();
        let rows = m.len();
        let blocks = par::map_chunks(rows, par::CHUNK, |s, e| {
            let v = self.monomial_block(m, s, e);
            let mut out = DMatrix::<f64>::zeros(e - s, n);
            out.gemm(1.0, &v, &self.coeffs.transpose(), 0.0);
            out
        });
        let mut out = DMatrix::<f64>::zeros(rows, n);
        let mut start = 0;
        for b in blocks {
            let h = b.nrows();
            out.rows_mut(start, h).copy_from(&b);
            start += h;
        }
        if let Some((i, v)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i % rows.max(1),
                value: *v,
            });
        }
        Ok(out)
    }

    // Monomial vectors of points `s..e`, one row per point.
    fn monomial_block<M: Measure + ?Sized>(&self, m: &M, s: usize, e: usize) -> DMatrix<f64> {
        let n = self.len();
        let mut v = DMatrix::<f64>::zeros(e - s, n);
        let mut scratch = vec![0.0; self.dim()];
        let mut mono = vec![0.0; n];
        for (r, k) in (s..e).enumerate() {
            self.monomials_into(m.point(k), &mut scratch, &mut mono);
            for (j, &x) in mono.iter().enumerate() {
                v[(r, j)] = x;
            }
        }
        v
    }

    /// Weighted Gram matrix `sum_k w_k Psi(x_k) Psi(x_k)^T`.
    pub fn gram<M: Measure + ?Sized>(&self, m: &M) -> Result<DMatrix<f64>> {
        if m.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        Ok(orthonormal::coefficient_gram(
            m,
            &self.index,
            self.scaling.as_ref(),
            Some(&self.coeffs),
        ))
    }

    /// Monomial coefficients of `sum_k c_k psi_k`.
    pub fn monomial_coefficients(&self, c: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n];
        for (k, &ck) in c.iter().enumerate().take(n) {
            if ck == 0.0 {
                continue;
            }
            for (j, aj) in a.iter_mut().enumerate().take(k + 1) {
                *aj += ck * self.coeffs[(k, j)];
            }
        }
        a
    }

    /// Euclidean norm of each coefficient row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.coeffs.row(k).norm())
            .collect()
    }

    pub fn gradient(&self) -> Result<BasisGradient> {
        BasisGradient::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BasisFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<BasisFile>(text)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub dim: usize,
    pub degree: usize,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<InputScaling>,
    pub ordering: Vec<Vec<u32>>,
    /// Row `k` holds its `k + 1` leading coefficients.
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_rows: Vec<usize>,
}

impl From<&PolynomialBasis> for BasisFile {
    fn from(b: &PolynomialBasis) -> Self {
        Self {
            dim: b.dim(),
            degree: b.degree(),
            provenance: b.provenance.clone(),
            scaling: b.scaling.clone(),
            ordering: b.index.iter().map(|a| a.to_vec()).collect(),
            rows: (0..b.len())
                .map(|k| (0..=k).map(|j| b.coeffs[(k, j)]).collect())
                .collect(),
            fallback_rows: b.fallback_rows.clone(),
        }
    }
}

impl TryFrom<BasisFile> for PolynomialBasis {
    type Error = Error;

    fn try_from(f: BasisFile) -> Result<Self> {
        let index = MultiIndexSet::graded_lex(f.dim, f.degree)?;
        let n = index.len();
        if f.ordering.len() != n || f.rows.len() != n {
            return Err(Error::Parse(format!("basis file should list {n} functions")));
        }
        for (k, alpha) in f.ordering.iter().enumerate() {
            if alpha.as_slice() != index.get(k) {
                return Err(Error::Parse(format!("basis ordering differs at position {k}")));
            }
        }
        let mut coeffs = DMatrix::zeros(n, n);
        for (k, row) in f.rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::Parse(format!("row {k} should have {} entries", k + 1)));
            }
            for (j, &v) in row.iter().enumerate() {
                coeffs[(k, j)] = v;
            }
        }
        let mut basis = PolynomialBasis::new(index, coeffs, f.provenance, f.scaling)?;
        basis.fallback_rows = f.fallback_rows;
        Ok(basis)
    }
}

/// Monomial vectors at every point of `m` (with optional input scaling), evaluated directly.
pub fn evaluate_monomials(index: &MultiIndexSet, point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: point.len(),
        });
    }
    let v = index.monomials(point);
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: 0, value: *x });
    }
    Ok(v)
}
