use nalgebra::DMatrix;

use super::PolynomialBasis;
use crate::error::{Error, Result};
use crate::multi_index::MultiIndexSet;

/// Partial derivatives of every basis function in the monomial basis of degree `p - 1`.
///
/// `mats[j][(k, g)]` is the coefficient of monomial `g` in `d psi_k / d x_j`.
#[derive(Debug, Clone)]
pub struct BasisGradient {
    lower: MultiIndexSet,
    mats: Vec<DMatrix<f64>>,
    scaling: Option<super::InputScaling>,
}

impl BasisGradient {
    pub fn new(basis: &PolynomialBasis) -> Result<Self> {
        let p = basis.degree();
        if p == 0 {
            return Err(Error::InvalidArgument("gradient of a degree-0 basis".into()));
        }
        let d = basis.dim();
        let index = basis.index_set();
        let lower = MultiIndexSet::graded_lex(d, p - 1)?;
        let n = basis.len();
        let m = lower.len();
        let f = basis.coefficients();
        let inv_scale: Vec<f64> = match basis.scaling() {
            Some(s) => s.scale.iter().map(|v| 1.0 / v).collect(),
            None => vec![1.0; d],
        };
        let mut mats = Vec::with_capacity(d);
        let mut raised = vec![0u32; d];
        for j in 0..d {
            let mut dj = DMatrix::<f64>::zeros(n, m);
            for g in 0..m {
                raised.copy_from_slice(lower.get(g));
                raised[j] += 1;
                let pos = index.position(&raised).expect("raised index stays within degree p");
                let factor = raised[j] as f64 * inv_scale[j];
                for k in pos..n {
                    dj[(k, g)] = f[(k, pos)] * factor;
                }
            }
            mats.push(dj);
        }
        Ok(Self {
            lower,
            mats,
            scaling: basis.scaling().cloned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mats.len()
    }

    /// Monomial index set of the derivative polynomials.
    pub fn lower_index(&self) -> &MultiIndexSet {
        &self.lower
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// Monomials of degree `p - 1` at `x`, after the basis input scaling.
    pub fn lower_monomials(&self, x: &[f64], out: &mut [f64]) {
        match &self.scaling {
            Some(s) => {
                let mut y = vec![0.0; x.len()];
                s.apply(x, &mut y);
                self.lower.monomials_into(&y, out);
            }
            None => self.lower.monomials_into(x, out),
        }
    }

    /// `d x N` Jacobian: entry `(j, k)` is `d psi_k / d x_j` at `x`.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut mono = vec![0.0; self.lower.len()];
        self.lower_monomials(x, &mut mono);
        let n = self.mats.first().map(|m| m.nrows()).unwrap_or(0);
        let mut out = DMatrix::zeros(self.dim(), n);
        for (j, dj) in self.mats.iter().enumerate() {
            for k in 0..n {
                let mut acc = 0.0;
                for (g, &m) in mono.iter().enumerate() {
                    acc += dj[(k, g)] * m;
                }
                out[(j, k)] = acc;
            }
        }
        out
    }

    /// Coefficients `D_j^T c` of the derivative polynomials of `sum_k c_k psi_k`, one vector per dimension.
    pub fn contract(&self, c: &[f64]) -> Vec<Vec<f64>> {
        self.mats
            .iter()
            .map(|dj| {
                (0..dj.ncols())
                    .map(|g| (0..dj.nrows()).map(|k| dj[(k, g)] * c[k]).sum())
                    .collect()
            })
            .collect()
    }
}
