use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DensityFamily, Measure};
use crate::error::{Error, Result};

/// Default upper bound on the number of nodes a tensor or sparse grid may produce.
pub const DEFAULT_NODE_CAP: usize = 10_000_000;

// nodes closer than this in max-norm are treated as one
const MERGE_TOL: f64 = 1e-12;

/// Weighted nodes integrating all polynomials up to `exactness` total degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exactness: usize,
}

impl QuadratureRule {
    pub fn new(dim: usize, nodes: Vec<f64>, weights: Vec<f64>, exactness: usize) -> Result<Self> {
        if dim == 0 || nodes.len() != dim * weights.len() || weights.is_empty() {
            return Err(Error::InvalidArgument(
                "quadrature nodes and weights have inconsistent sizes".into(),
            ));
        }
        Ok(Self {
            dim,
            nodes,
            weights,
            exactness,
        })
    }

    /// Largest total degree integrated exactly.
    pub fn exactness(&self) -> usize {
        self.exactness
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `sum_k w_k f(x_k)`, compensated because sparse-grid weights cancel heavily.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        crate::linalg::compensated_sum((0..self.len()).map(|k| self.weights[k] * f(self.point(k))))
    }

    /// Maps every node through `f`, keeping weights and exactness.
    pub fn map_nodes<F: Fn(&[f64], &mut [f64])>(&self, f: F) -> Self {
        let mut nodes = vec![0.0; self.nodes.len()];
        for k in 0..self.len() {
            f(self.point(k), &mut nodes[k * self.dim..(k + 1) * self.dim]);
        }
        Self {
            nodes,
            ..self.clone()
        }
    }
}

impl Measure for QuadratureRule {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `n`-point Gauss rule for `family` via the eigen-decomposition of its Jacobi matrix.
pub fn gauss_rule_1d(family: DensityFamily, n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss rule needs at least one node".into()));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = family.recurrence(k).0;
        if k + 1 < n {
            let off = family.recurrence(k + 1).1.sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let eig = nalgebra::SymmetricEigen::try_new(jacobi, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure(format!("Jacobi matrix of {family} rule, n = {n}")))?;
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    if pairs.iter().any(|(x, w)| !x.is_finite() || !w.is_finite()) {
        return Err(Error::EigenFailure(format!("{family} rule produced non-finite values")));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if family.is_symmetric() {
        let snapshot = pairs.clone();
        for i in 0..n {
            let j = n - 1 - i;
            pairs[i].0 = 0.5 * (snapshot[i].0 - snapshot[j].0);
            pairs[i].1 = 0.5 * (snapshot[i].1 + snapshot[j].1);
        }
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let (nodes, weights) = pairs.into_iter().map(|(x, w)| (x, w / total)).unzip();
    QuadratureRule::new(1, nodes, weights, 2 * n - 1)
}

/// Full tensor product of one-dimensional rules.
pub fn tensor_rule(rules: &[QuadratureRule], cap: usize) -> Result<QuadratureRule> {
    if rules.is_empty() {
        return Err(Error::InvalidArgument("tensor rule needs at least one factor".into()));
    }
    if rules.iter().any(|r| r.dim() != 1) {
        return Err(Error::InvalidArgument("tensor factors must be one-dimensional".into()));
    }
    let count = rules
        .iter()
        .try_fold(1u128, |acc, r| acc.checked_mul(r.len() as u128))
        .unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::NodeCap { count, cap });
    }
    let d = rules.len();
    let count = count as usize;
    let mut nodes = Vec::with_capacity(count * d);
    let mut weights = Vec::with_capacity(count);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        let mut w = 1.0;
        for (j, r) in rules.iter().enumerate() {
            nodes.push(r.point(idx[j])[0]);
            w *= r.weights()[idx[j]];
        }
        weights.push(w);
        // first dimension varies slowest
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < rules[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    let exactness = rules.iter().map(|r| r.exactness()).min().unwrap_or(0);
    QuadratureRule::new(d, nodes, weights, exactness)
}

/// Smolyak sparse grid of level `level` for a product of identical densities.
pub fn smolyak_rule(family: DensityFamily, d: usize, level: usize, cap: usize) -> Result<QuadratureRule> {
    smolyak_rule_mixed(&vec![family; d], level, cap)
}

/// Smolyak sparse grid over a product of possibly different densities.
///
/// Level `l` in one dimension is the `(l + 1)`-point Gauss rule, so the grid
/// integrates total degree `2 level + 1` exactly.
pub fn smolyak_rule_mixed(families: &[DensityFamily], level: usize, cap: usize) -> Result<QuadratureRule> {
    let d = families.len();
    if d == 0 {
        return Err(Error::InvalidArgument("sparse grid dimension must be at least 1".into()));
    }
    let mut cache: HashMap<(DensityFamily, usize), QuadratureRule> = HashMap::new();
    for &f in families {
        for l in 0..=level {
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry((f, l)) {
                e.insert(gauss_rule_1d(f, l + 1)?);
            }
        }
    }

    let low = (level + 1).saturating_sub(d);
    let mut nodes: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut lookup: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut raw_count: u128 = 0;

    let mut levels = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut key = vec![0i64; d];
    loop {
        let total: usize = levels.iter().sum();
        if total >= low && total <= level {
            let gap = level - total;
            let coeff = sign(gap) * binomial(d - 1, gap);
            if coeff != 0.0 {
                let factors: Vec<&QuadratureRule> =
                    (0..d).map(|j| &cache[&(families[j], levels[j])]).collect();
                let size: u128 = factors.iter().map(|r| r.len() as u128).product();
                raw_count += size;
                if raw_count > cap as u128 {
                    return Err(Error::NodeCap { count: raw_count, cap });
                }
                let mut idx = vec![0usize; d];
                for _ in 0..size {
                    let mut w = coeff;
                    for j in 0..d {
                        point[j] = factors[j].point(idx[j])[0];
                        w *= factors[j].weights()[idx[j]];
                        key[j] = (point[j] / MERGE_TOL).round() as i64;
                    }
                    match lookup.get(&key) {
                        Some(&pos) => weights[pos] += w,
                        None => {
                            lookup.insert(key.clone(), weights.len());
                            nodes.extend_from_slice(&point);
                            weights.push(w);
                        }
                    }
                    for j in (0..d).rev() {
                        idx[j] += 1;
                        if idx[j] < factors[j].len() {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
            }
        }
        if !next_level_index(&mut levels, level) {
            break;
        }
    }
    // the combination coefficients grow like C(d - 1, level); rescaling removes
    // the accumulated rounding in the total mass
    let total = crate::linalg::compensated_sum(weights.iter().copied());
    weights.iter_mut().for_each(|w| *w /= total);
    QuadratureRule::new(d, nodes, weights, 2 * level + 1)
}

// Advances `levels` through all vectors with entries summing to at most `max`.
fn next_level_index(levels: &mut [usize], max: usize) -> bool {
    let d = levels.len();
    for j in (0..d).rev() {
        let total: usize = levels.iter().sum();
        if total < max {
            levels[j] += 1;
            return true;
        }
        levels[j] = 0;
    }
    false
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn two_point_legendre() {
        let r = gauss_rule_1d(DensityFamily::Uniform, 2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.point(0)[0] + s).abs() < 1e-15 && (r.point(1)[0] - s).abs() < 1e-15);
        assert!((r.weights()[0] - 0.5).abs() < 1e-15);
        assert!((r.integrate(|x| x[0] * x[0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.exactness(), 3);
    }

    #[test]
    fn three_point_chebyshev() {
        let r = gauss_rule_1d(DensityFamily::Arcsine, 3).unwrap();
        let mut expect: Vec<f64> = (1..=3)
            .map(|k| ((2 * k - 1) as f64 * std::f64::consts::PI / 6.0).cos())
            .collect();
        expect.sort_by(f64::total_cmp);
        for k in 0..3 {
            assert!((r.point(k)[0] - expect[k]).abs() < 1e-14);
            assert!((r.weights()[k] - 1.0 / 3.0).abs() < 1e-14);
        }
        assert!((r.integrate(|x| x[0] * x[0]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn one_point_gaussian() {
        let r = gauss_rule_1d(DensityFamily::Gaussian, 1).unwrap();
        assert_eq!(r.point(0)[0], 0.0);
        assert_eq!(r.weights()[0], 1.0);
    }

    #[test]
    fn gauss_rules_reproduce_moments() {
        for fam in DensityFamily::ALL {
            for n in 1..12 {
                let r = gauss_rule_1d(fam, n).unwrap();
                for k in 0..=(2 * n - 1) as u32 {
                    let got = r.integrate(|x| x[0].powi(k as i32));
                    let want = fam.moment(k);
                    // odd moments vanish, so measure against the neighbouring even one
                    let scale = fam.moment(k + k % 2);
                    assert!((got - want).abs() <= 1e-10 * (1.0 + scale), "{fam} n={n} k={k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn tensor_of_two_legendre_rules() {
        let r = gauss_rule_1d(DensityFamily::Uniform, 2).unwrap();
        let t = tensor_rule(&[r.clone(), r.clone()], DEFAULT_NODE_CAP).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.weights().iter().all(|w| (w - 0.25).abs() < 1e-15));
        let v = t.integrate(|x| x[0] * x[0] * x[1] * x[1]);
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
        let single = tensor_rule(std::slice::from_ref(&r), DEFAULT_NODE_CAP).unwrap();
        assert_eq!(single, r);
    }

    #[test]
    fn tensor_cap_is_enforced() {
        let r = gauss_rule_1d(DensityFamily::Gaussian, 10).unwrap();
        let rules = vec![r; 8];
        match tensor_rule(&rules, DEFAULT_NODE_CAP) {
            Err(Error::NodeCap { count, .. }) => assert_eq!(count, 100_000_000),
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn smolyak_level_zero() {
        let r = smolyak_rule(DensityFamily::Exponential, 3, 0, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.point(0), &[1.0, 1.0, 1.0]);
        assert!((r.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smolyak_gaussian_fourth_moment() {
        let r = smolyak_rule(DensityFamily::Gaussian, 2, 2, DEFAULT_NODE_CAP).unwrap();
        let v = r.integrate(|x| x[0] * x[0] * x[1] * x[1]);
        assert!((v - 1.0).abs() < 1e-10);
        assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smolyak_arcsine_high_dimension() {
        let d = 16;
        let r = smolyak_rule(DensityFamily::Arcsine, d, 4, DEFAULT_NODE_CAP).unwrap();
        let total = r.integrate(|_| 1.0);
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            // random exponent vector of total degree 6
            let mut alpha = vec![0u32; d];
            for _ in 0..6 {
                alpha[rng.random_range(0..d)] += 1;
            }
            let want: f64 = alpha.iter().map(|&a| DensityFamily::Arcsine.moment(a)).product();
            let got = r.integrate(|x| {
                x.iter()
                    .zip(&alpha)
                    .map(|(v, &a)| v.powi(a as i32))
                    .product()
            });
            assert!((got - want).abs() < 1e-8, "{alpha:?}: {got} vs {want}");
        }
    }

    #[test]
    fn smolyak_mixed_families_exact_to_stated_degree() {
        let fams = [
            DensityFamily::Exponential,
            DensityFamily::Uniform,
            DensityFamily::Gaussian,
        ];
        let level = 3;
        let r = smolyak_rule_mixed(&fams, level, DEFAULT_NODE_CAP).unwrap();
        let set = crate::multi_index::MultiIndexSet::graded_lex(3, r.exactness()).unwrap();
        for alpha in set.iter() {
            let want: f64 = fams.iter().zip(alpha).map(|(f, &a)| f.moment(a)).product();
            let got = r.integrate(|x| {
                x.iter()
                    .zip(alpha)
                    .map(|(v, &a)| v.powi(a as i32))
                    .product()
            });
            assert!(close(got, want, 1e-10), "{alpha:?}: {got} vs {want}");
        }
    }

    #[test]
    fn level_enumeration_counts() {
        let mut levels = vec![0usize; 3];
        let mut n = 1;
        while next_level_index(&mut levels, 2) {
            n += 1;
        }
        assert_eq!(n, 10);
    }
}
