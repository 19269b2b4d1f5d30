//! Total-degree multi-index sets in graded lexicographic order.
//!
//! Indices are grouped by total degree (ascending). Within a degree block an
//! index comes first when the first nonzero entry of its difference with the
//! other index is positive, so for `d = 2, p = 2` the order is
//! `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

/// Ordering used for every basis in the crate: `Less` means `a` is emitted before `b`.
pub fn graded_lex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    let da: u32 = a.iter().sum();
    let db: u32 = b.iter().sum();
    match da.cmp(&db) {
        Ordering::Equal => {
            for (x, y) in a.iter().zip(b) {
                if x != y {
                    // larger leading exponent comes first within a degree block
                    return y.cmp(x);
                }
            }
            a.len().cmp(&b.len())
        }
        other => other,
    }
}

/// Dimension of the space of `d`-variate polynomials of total degree at most `p`.
pub fn basis_count(d: usize, p: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let overflow = || Error::Overflow { n: d + p, k: p };
    let mut acc: u128 = 1;
    for i in 1..=p as u128 {
        acc = acc
            .checked_mul(d as u128 + i)
            .ok_or_else(overflow)?
            / i;
    }
    usize::try_from(acc).map_err(|_| overflow())
}

/// Ordered set of all multi-indices with `|alpha| <= p`.
#[derive(Debug, Clone)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    exps: Vec<u32>,
    single_of: HashMap<Vec<u32>, usize>,
    // (position of alpha - e_j, j) for every nonconstant alpha
    parents: Vec<(usize, usize)>,
    blocks: Vec<Range<usize>>,
}

impl PartialEq for MultiIndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.degree == other.degree
    }
}

impl MultiIndexSet {
    /// All indices with total degree at most `p`, graded lexicographic order.
    pub fn graded_lex(d: usize, p: usize) -> Result<Self> {
        let n = basis_count(d, p)?;
        let mut exps = Vec::with_capacity(n * d);
        let mut blocks = Vec::with_capacity(p + 1);
        let mut current = vec![0u32; d];
        for r in 0..=p {
            let start = exps.len() / d;
            compositions(r as u32, 0, &mut current, &mut exps);
            blocks.push(start..exps.len() / d);
        }
        debug_assert_eq!(exps.len(), n * d);

        let mut single_of = HashMap::with_capacity(n);
        for k in 0..n {
            single_of.insert(exps[k * d..(k + 1) * d].to_vec(), k);
        }
        let mut parents = Vec::with_capacity(n);
        parents.push((0, 0));
        for k in 1..n {
            let alpha = &exps[k * d..(k + 1) * d];
            let j = alpha.iter().rposition(|&e| e > 0).expect("nonconstant index");
            let mut parent = alpha.to_vec();
            parent[j] -= 1;
            parents.push((single_of[&parent], j));
        }
        Ok(Self {
            dim: d,
            degree: p,
            exps,
            single_of,
            parents,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Exponents of the `k`-th index.
    pub fn get(&self, k: usize) -> &[u32] {
        &self.exps[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.exps.chunks_exact(self.dim)
    }

    pub fn to_multi_indices(&self) -> Vec<MultiIndex> {
        self.iter().map(|a| MultiIndex(a.to_vec())).collect()
    }

    /// Position of `alpha` in the ordering.
    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.single_of.get(alpha).copied()
    }

    pub fn total_degree(&self, k: usize) -> u32 {
        self.get(k).iter().sum()
    }

    /// Contiguous index ranges, one per total degree `0..=p`.
    pub fn degree_blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Number of indices of total degree at most `q` (a prefix of the ordering).
    pub fn prefix_len(&self, q: usize) -> usize {
        if q >= self.degree {
            self.len()
        } else {
            self.blocks[q].end
        }
    }

    /// Evaluates all monomials at `x` into `out` (length `len()`).
    pub fn monomials_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        out[0] = 1.0;
        for k in 1..self.len() {
            let (parent, j) = self.parents[k];
            out[k] = out[parent] * x[j];
        }
    }

    pub fn monomials(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.monomials_into(x, &mut out);
        out
    }
}

// Emits all compositions of `remaining` into dims `pos..` in descending lexicographic order.
fn compositions(remaining: u32, pos: usize, current: &mut [u32], out: &mut Vec<u32>) {
    let d = current.len();
    if pos == d - 1 {
        current[pos] = remaining;
        out.extend_from_slice(current);
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn as_vecs(set: &MultiIndexSet) -> Vec<Vec<u32>> {
        set.iter().map(|a| a.to_vec()).collect()
    }

    #[test]
    fn two_dims_degree_two() {
        let set = MultiIndexSet::graded_lex(2, 2).unwrap();
        assert_eq!(
            as_vecs(&set),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        // (1,0) - (0,1) = (1,-1): first nonzero entry positive
        assert_eq!(graded_lex_cmp(&[1, 0], &[0, 1]), Ordering::Less);
    }

    #[test]
    fn univariate() {
        let set = MultiIndexSet::graded_lex(1, 3).unwrap();
        assert_eq!(as_vecs(&set), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn three_dims_matches_brute_force() {
        let set = MultiIndexSet::graded_lex(3, 2).unwrap();
        let mut brute = Vec::new();
        for a in 0..=2u32 {
            for b in 0..=2u32 {
                for c in 0..=2u32 {
                    if a + b + c <= 2 {
                        brute.push(vec![a, b, c]);
                    }
                }
            }
        }
        brute.sort_by(|x, y| graded_lex_cmp(x, y));
        assert_eq!(as_vecs(&set), brute);
        let sizes: Vec<usize> = set.degree_blocks().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![1, 3, 6]);
    }

    #[test]
    fn counts() {
        assert_eq!(basis_count(25, 2).unwrap(), 351);
        assert_eq!(basis_count(12, 4).unwrap(), 1820);
        assert_eq!(basis_count(20, 3).unwrap(), 1771);
        assert_eq!(basis_count(7, 0).unwrap(), 1);
        assert!(basis_count(0, 3).is_err());
        assert!(matches!(
            basis_count(1 << 40, 40),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(MultiIndexSet::graded_lex(0, 2).is_err());
    }

    #[test]
    fn monomial_evaluation() {
        let set = MultiIndexSet::graded_lex(2, 2).unwrap();
        assert_eq!(set.monomials(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(set.monomials(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lower_degree_set_is_prefix() {
        let big = MultiIndexSet::graded_lex(4, 3).unwrap();
        let small = MultiIndexSet::graded_lex(4, 2).unwrap();
        assert_eq!(big.prefix_len(2), small.len());
        for k in 0..small.len() {
            assert_eq!(big.get(k), small.get(k));
        }
    }

    proptest! {
        #[test]
        fn length_and_round_trip(d in 1usize..6, p in 0usize..5) {
            let set = MultiIndexSet::graded_lex(d, p).unwrap();
            prop_assert_eq!(set.len(), basis_count(d, p).unwrap());
            for k in 0..set.len() {
                prop_assert_eq!(set.position(set.get(k)), Some(k));
                if k > 0 {
                    prop_assert_eq!(graded_lex_cmp(set.get(k - 1), set.get(k)), Ordering::Less);
                }
            }
        }

        #[test]
        fn comparison_is_strict_total_order(
            a in proptest::collection::vec(0u32..4, 3),
            b in proptest::collection::vec(0u32..4, 3),
            c in proptest::collection::vec(0u32..4, 3),
        ) {
            let ab = graded_lex_cmp(&a, &b);
            prop_assert_eq!(ab, graded_lex_cmp(&b, &a).reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if ab == Ordering::Less && graded_lex_cmp(&b, &c) == Ordering::Less {
                prop_assert_eq!(graded_lex_cmp(&a, &c), Ordering::Less);
            }
        }
    }
}
