//! Matrix-quality metrics: Gram deviation, restricted isometry constants on a
//! fixed support, the basis bound and null-space property probes.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_spectral_norm, ThinSvd};
use crate::measure::{fmt_f64, Measure, SampleSet};
use crate::par;

/// Default cap on the number of enumerated cross supports.
pub const DEFAULT_RIC_BUDGET: u64 = 1_000_000;
const GREEDY_RESTARTS: usize = 64;

/// `|G - I|_2` for the empirical Gram matrix of `basis` on `pts`.
pub fn gram_deviation<M: Measure + ?Sized>(basis: &PolynomialBasis, pts: &M) -> Result<f64> {
    let mut g = basis.gram(pts)?;
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    Ok(symmetric_spectral_norm(&g))
}

/// Sorted set of column indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSpec {
    indices: Vec<usize>,
}

impl SupportSpec {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("support indices must be distinct".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::InvalidArgument(format!(
                    "support index {last} outside 0..{n}"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sorted complement within `0..n`.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut mask = vec![false; n];
        for &i in &self.indices {
            mask[i] = true;
        }
        (0..n).filter(|&i| !mask[i]).collect()
    }
}

/// Restricted isometry quantities on a fixed support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicReport {
    pub delta_s: f64,
    pub theta_s: f64,
    /// `theta_s / (1 - delta_s)`; infinite when `delta_s >= 1`.
    pub indicator: f64,
    /// True when every cross support was enumerated.
    pub exact: bool,
    pub tprime_count: u64,
}

/// `delta_s` and `theta_s` of `a` on support `t`.
///
/// Cross supports `t'` are taken of size `min(s, N - s)` in the complement of `t`; the
/// coupling norm only grows when columns are added, so smaller sets never dominate.
/// The search is exhaustive when the number of candidates is at most `budget`,
/// otherwise greedy with random restarts (a lower bound, `exact = false`).
pub fn ric_constants(a: &DMatrix<f64>, t: &SupportSpec, budget: u64, seed: u64) -> Result<RicReport> {
    let (m, n) = (a.nrows(), a.ncols());
    let s = t.len();
    if s == 0 {
        return Err(Error::InvalidArgument("empty support".into()));
    }
    if s > m {
        return Err(Error::InvalidArgument(format!(
            "support size {s} exceeds the number of rows {m}"
        )));
    }
    if let Some(&last) = t.indices().last() {
        if last >= n {
            return Err(Error::DimensionMismatch { expected: n, found: last + 1 });
        }
    }
    if let Some((i, v)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: *v });
    }
    let at = a.select_columns(t.indices());
    let eig = SymmetricEigen::try_new(at.transpose() * &at, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("support Gram eigenvalues".into()))?;
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let delta_s = (lmax - 1.0).max(1.0 - lmin).max(0.0);

    let rest = t.complement(n);
    let k = s.min(rest.len());
    let (theta_s, exact, count) = if k == 0 {
        (0.0, true, 0)
    } else {
        // rows of the cross Gram block, one per candidate column
        let cross = a.select_columns(&rest).transpose() * &at;
        let rows: Vec<Vec<f64>> = (0..rest.len())
            .map(|i| cross.row(i).iter().copied().collect())
            .collect();
        let total = binomial(rest.len() as u64, k as u64);
        match total {
            Some(c) if c <= budget => (exhaustive_theta(&rows, k, s), true, c),
            _ => greedy_theta(&rows, k, s, seed),
        }
    };
    let indicator = if delta_s < 1.0 {
        theta_s / (1.0 - delta_s)
    } else {
        f64::INFINITY
    };
    Ok(RicReport {
        delta_s,
        theta_s,
        indicator,
        exact,
        tprime_count: count,
    })
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

// Spectral norm of the stacked rows, via the s x s matrix sum r r^T.
fn stacked_norm(rows: &[Vec<f64>], pick: &[usize], s: usize) -> f64 {
    let mut g = vec![0.0; s * s];
    for &i in pick {
        let r = &rows[i];
        for p in 0..s {
            for q in 0..s {
                g[p * s + q] += r[p] * r[q];
            }
        }
    }
    let ev = crate::linalg::jacobi_eigenvalues(&mut g, s);
    ev.into_iter().fold(0.0, f64::max).max(0.0).sqrt()
}

fn exhaustive_theta(rows: &[Vec<f64>], k: usize, s: usize) -> f64 {
    let n = rows.len();
    // split the enumeration on the first chosen index
    let parts = par::map_range(n + 1 - k, |first| {
        let mut best = 0.0f64;
        let mut pick: Vec<usize> = Vec::with_capacity(k);
        pick.push(first);
        pick.extend(first + 1..first + k);
        loop {
            best = best.max(stacked_norm(rows, &pick, s));
            // next combination of the tail, keeping pick[0] fixed
            let mut i = k;
            loop {
                if i == 1 {
                    return best;
                }
                i -= 1;
                if pick[i] < n - (k - i) {
                    pick[i] += 1;
                    for j in i + 1..k {
                        pick[j] = pick[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    });
    parts.into_iter().fold(0.0, f64::max)
}

fn greedy_from(rows: &[Vec<f64>], k: usize, s: usize, start: usize) -> f64 {
    let mut pick = vec![start];
    let mut used = vec![false; rows.len()];
    used[start] = true;
    let mut best = stacked_norm(rows, &pick, s);
    while pick.len() < k {
        let mut arg = None;
        let mut val = f64::NEG_INFINITY;
        for i in 0..rows.len() {
            if used[i] {
                continue;
            }
            pick.push(i);
            let v = stacked_norm(rows, &pick, s);
            pick.pop();
            if v > val {
                val = v;
                arg = Some(i);
            }
        }
        let Some(i) = arg else { break };
        used[i] = true;
        pick.push(i);
        best = val;
    }
    best
}

fn greedy_theta(rows: &[Vec<f64>], k: usize, s: usize, seed: u64) -> (f64, bool, u64) {
    // deterministic start: the heaviest single row
    let heaviest = (0..rows.len())
        .max_by(|&i, &j| {
            let ni: f64 = rows[i].iter().map(|v| v * v).sum();
            let nj: f64 = rows[j].iter().map(|v| v * v).sum();
            ni.total_cmp(&nj)
        })
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![heaviest];
    starts.extend((0..GREEDY_RESTARTS).map(|_| rng.random_range(0..rows.len())));
    let vals = par::map_range(starts.len(), |r| greedy_from(rows, k, s, starts[r]));
    let best = vals.into_iter().fold(0.0, f64::max);
    (best, false, starts.len() as u64)
}

/// Per-point maximum basis magnitude `k(x) = max_i |psi_i(x)|`.
pub fn max_magnitudes(basis: &PolynomialBasis, pts: &SampleSet) -> Result<Vec<f64>> {
    if pts.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: pts.dim(),
        });
    }
    let d = pts.dim();
    let parts = par::map_chunks(pts.len(), par::CHUNK, |start, end| -> Result<Vec<f64>> {
        let chunk = SampleSet::new(d, pts.points()[start * d..end * d].to_vec())?;
        let vals = basis.evaluate_matrix(&chunk)?;
        Ok((0..vals.nrows()).map(|i| vals.row(i).amax()).collect())
    });
    let mut out = Vec::with_capacity(pts.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Conditional tail mean of `k(x)` beyond `m_sigma` standard deviations.
///
/// Falls back to the maximum of `k` when no point lies that far from the mean.
pub fn basis_bound(basis: &PolynomialBasis, pts: &SampleSet, m_sigma: f64) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    Ok(tail_mean(&max_magnitudes(basis, pts)?, m_sigma))
}

/// Basis bound at several thresholds from one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundLadder {
    pub m_sigma: Vec<f64>,
    pub bound: Vec<f64>,
    pub max: f64,
    /// Whether the bound is non-decreasing along the (sorted) thresholds.
    pub monotone: bool,
}

pub fn basis_bound_ladder(basis: &PolynomialBasis, pts: &SampleSet, m_sigma: &[f64]) -> Result<BoundLadder> {
    if pts.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let k = max_magnitudes(basis, pts)?;
    let mut sorted = m_sigma.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bound: Vec<f64> = sorted.iter().map(|&t| tail_mean(&k, t)).collect();
    let monotone = bound.windows(2).all(|w| w[1] >= w[0]);
    Ok(BoundLadder {
        m_sigma: sorted,
        bound,
        max: k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        monotone,
    })
}

/// Mean of the values farther than `m_sigma` population standard deviations from the mean.
pub fn tail_mean(k: &[f64], m_sigma: f64) -> f64 {
    let n = k.len() as f64;
    let mean = k.iter().sum::<f64>() / n;
    let var = k.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let cut = m_sigma * var.sqrt();
    let (sum, count) = k
        .iter()
        .filter(|v| (*v - mean).abs() > cut)
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        sum / count as f64
    }
}

/// Kernel vectors whose l1 mass concentrates on a support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSpaceProbe {
    /// Unit vectors `v` with `A v = 0` and `|v_T|_1 > |v_{T^c}|_1`.
    pub vectors: Vec<Vec<f64>>,
    /// Entry magnitudes of each vector, sorted in decreasing order.
    pub profiles: Vec<Vec<f64>>,
    pub requested: usize,
    pub attempts: usize,
    /// True when the attempt cap ran out before `requested` vectors were found.
    pub shortfall: bool,
}

impl NullSpaceProbe {
    /// Long-format CSV `vector,i,magnitude` of the sorted profiles.
    pub fn write_profiles_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["vector", "i", "magnitude"])?;
        for (v, prof) in self.profiles.iter().enumerate() {
            for (i, m) in prof.iter().enumerate() {
                w.write_record([v.to_string(), i.to_string(), fmt_f64(*m)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_profiles(&self, path: &Path) -> Result<()> {
        self.write_profiles_csv(std::fs::File::create(path)?)
    }
}

/// Orthonormal basis of `Ker A`, one column per kernel direction.
pub fn kernel_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    let svd = ThinSvd::new(a)?;
    if svd.rank() >= n {
        return Err(Error::InvalidArgument("matrix has a trivial kernel".into()));
    }
    let mut proj = DMatrix::<f64>::identity(n, n) - &svd.v * svd.v.transpose();
    crate::linalg::symmetrize(&mut proj);
    let eig = SymmetricEigen::try_new(proj, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("kernel projector".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let dim = n - svd.rank();
    let cols: Vec<_> = order[..dim].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Ok(DMatrix::from_columns(&cols))
}

fn dominance(v: &DVector<f64>, on: &[bool]) -> f64 {
    v.iter()
        .zip(on)
        .map(|(x, &t)| if t { x.abs() } else { -x.abs() })
        .sum()
}

/// Collects `count` kernel vectors satisfying the null-space dominance condition on `t`.
///
/// Each attempt draws an isotropic Gaussian direction in kernel coordinates. A draw
/// that fails the condition is pushed uphill by projected subgradient steps on
/// `|v_T|_1 - |v_{T^c}|_1` over the unit sphere of the kernel; it counts as
/// rejected if it still fails. At most `attempts_per_vector * count` draws are made.
pub fn null_space_probe(
    a: &DMatrix<f64>,
    t: &SupportSpec,
    count: usize,
    seed: u64,
    attempts_per_vector: usize,
) -> Result<NullSpaceProbe> {
    let n = a.ncols();
    if let Some(&last) = t.indices().last() {
        if last >= n {
            return Err(Error::DimensionMismatch { expected: n, found: last + 1 });
        }
    }
    let k = kernel_basis(a)?;
    let kd = k.ncols();
    let mut on = vec![false; n];
    for &i in t.indices() {
        on[i] = true;
    }
    let cap = attempts_per_vector.max(1).saturating_mul(count);
    // attempts are independent streams, evaluated in batches to keep output order fixed
    let attempt = |idx: usize| -> Option<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let mut w = DVector::from_fn(kd, |_, _| rng.sample::<f64, _>(StandardNormal));
        w /= w.norm();
        let mut v = &k * &w;
        let mut step = 0.5;
        for _ in 0..200 {
            if dominance(&v, &on) > 1e-12 * v.abs().sum() {
                break;
            }
            let g = DVector::from_iterator(
                n,
                v.iter().zip(&on).map(|(x, &t)| {
                    let sg = if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 };
                    if t { sg } else { -sg }
                }),
            );
            let mut grad = k.transpose() * g;
            // tangent component on the sphere
            grad -= &w * w.dot(&grad);
            let gn = grad.norm();
            if gn <= 1e-14 {
                break;
            }
            w += grad * (step / gn);
            w /= w.norm();
            v = &k * &w;
            step *= 0.97;
        }
        let nv = v.norm();
        v /= nv;
        if dominance(&v, &on) > 1e-12 * v.abs().sum() && (a * &v).amax() <= 1e-10 {
            Some(v.iter().copied().collect())
        } else {
            None
        }
    };
    let mut vectors = Vec::with_capacity(count);
    let mut attempts = 0;
    while vectors.len() < count && attempts < cap {
        let batch = (count - vectors.len()).max(16).min(cap - attempts);
        let found = par::map_range(batch, |i| attempt(attempts + i));
        for f in found {
            attempts += 1;
            if let Some(v) = f {
                vectors.push(v);
                if vectors.len() == count {
                    break;
                }
            }
        }
    }
    let profiles = vectors
        .iter()
        .map(|v| {
            let mut m: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            m.sort_by(|x, y| y.total_cmp(x));
            m
        })
        .collect();
    Ok(NullSpaceProbe {
        shortfall: vectors.len() < count,
        vectors,
        profiles,
        requested: count,
        attempts,
    })
}

/// Random support of size `s` in `0..n`.
pub fn random_support(n: usize, s: usize, seed: u64) -> Result<SupportSpec> {
    if s > n {
        return Err(Error::InvalidArgument(format!("support size {s} exceeds {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SupportSpec::new(sample(&mut rng, n, s).into_vec(), n)
}
