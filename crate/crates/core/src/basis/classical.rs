use nalgebra::DMatrix;

use super::{InputScaling, PolynomialBasis, Provenance};
use crate::error::{Error, Result};
use crate::measure::DensityFamily;
use crate::multi_index::MultiIndexSet;

/// Tensor-product orthonormal basis of the given univariate families, expanded into monomials.
///
/// With `scaling` the polynomials are applied to `(x - center) / scale`.
pub fn classical(
    families: &[DensityFamily],
    p: usize,
    scaling: Option<InputScaling>,
) -> Result<PolynomialBasis> {
    let d = families.len();
    let index = MultiIndexSet::graded_lex(d, p)?;
    let univariate: Vec<Vec<Vec<f64>>> = families
        .iter()
        .map(|f| f.orthonormal_coefficients(p))
        .collect();
    let n = index.len();
    let mut coeffs = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let alpha = index.get(k);
        // only monomials dominated componentwise by alpha contribute; they all precede k
        for j in 0..=k {
            let beta = index.get(j);
            if beta.iter().zip(alpha).any(|(b, a)| b > a) {
                continue;
            }
            let mut c = 1.0;
            for t in 0..d {
                c *= univariate[t][alpha[t] as usize][beta[t] as usize];
                if c == 0.0 {
                    break;
                }
            }
            coeffs[(k, j)] = c;
        }
    }
    if let Some(s) = &scaling {
        if s.scale.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("input scales must be positive".into()));
        }
    }
    PolynomialBasis::new(
        index,
        coeffs,
        Provenance::Classical {
            families: families.to_vec(),
        },
        scaling,
    )
}
