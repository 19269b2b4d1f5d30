use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Measure, SampleSet};
use crate::error::{Error, Result};
use crate::par;

/// Finite mixture of multivariate Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d x d` covariance per mode.
    pub covariances: Vec<Vec<f64>>,
}

impl GaussianMixtureSpec {
    /// Random centred mixture: Dirichlet(1, ..., 1) weights, means uniform on
    /// `[-1, 1]^d` shifted to a zero overall mean, covariances `(U U^T + I) / 4`
    /// with `U` a dense `d x d` matrix of `U[0, 1]` entries drawn per mode.
    pub fn random_centered(d: usize, modes: usize, seed: u64) -> Result<Self> {
        if d == 0 || modes == 0 {
            return Err(Error::InvalidArgument("mixture needs d >= 1 and at least one mode".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..modes).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|g| g / total).collect();
        let mut means: Vec<Vec<f64>> = (0..modes)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut shift = vec![0.0; d];
        for (a, mu) in weights.iter().zip(&means) {
            for j in 0..d {
                shift[j] += a * mu[j];
            }
        }
        for mu in &mut means {
            for j in 0..d {
                mu[j] -= shift[j];
            }
        }
        let covariances = (0..modes)
            .map(|_| {
                let u = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random::<f64>());
                let s = (&u * u.transpose() + DMatrix::identity(d, d)) * 0.25;
                s.transpose().as_slice().to_vec()
            })
            .collect();
        let spec = Self {
            weights,
            means,
            covariances,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn single(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let spec = Self {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![cov],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    pub fn modes(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let n = self.modes();
        if d == 0 || n == 0 || self.means.len() != n || self.covariances.len() != n {
            return Err(Error::InvalidArgument("mixture components are inconsistent".into()));
        }
        if self.weights.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        for (mu, cov) in self.means.iter().zip(&self.covariances) {
            if mu.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: mu.len(),
                });
            }
            if cov.len() != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d * d,
                    found: cov.len(),
                });
            }
        }
        self.cholesky_factors()?;
        Ok(())
    }

    /// `sum_i a_i mu_i`.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (a, mu) in self.weights.iter().zip(&self.means) {
            for j in 0..d {
                m[j] += a * mu[j];
            }
        }
        m
    }

    /// Second moment about the origin, `sum_i a_i (Sigma_i + mu_i mu_i^T)`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for ((a, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let m = DVector::from_column_slice(mu);
            out += (DMatrix::from_row_slice(d, d, cov) + &m * m.transpose()) * *a;
        }
        out
    }

    fn cholesky_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let d = self.dim();
        self.covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = DMatrix::from_row_slice(d, d, c);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::NotPositiveDefinite(format!("covariance {i} is not symmetric")));
                }
                nalgebra::Cholesky::new(m)
                    .map(|c| c.l())
                    .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance of mode {i}")))
            })
            .collect()
    }

    /// Draws `n` points; the result depends only on `(self, n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let d = self.dim();
        let factors = self.cholesky_factors()?;
        let mut cumulative = Vec::with_capacity(self.modes());
        let mut acc = 0.0;
        for a in &self.weights {
            acc += a;
            cumulative.push(acc);
        }
        let chunks = par::map_chunks(n, par::CHUNK, |start, end| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start as u64 / par::CHUNK as u64);
            let mut out = Vec::with_capacity((end - start) * d);
            let mut z = vec![0.0; d];
            for _ in start..end {
                let u: f64 = rng.random::<f64>() * acc;
                let mode = cumulative.iter().position(|&c| u < c).unwrap_or(self.modes() - 1);
                for zj in z.iter_mut() {
                    *zj = StandardNormal.sample(&mut rng);
                }
                let l = &factors[mode];
                let mu = &self.means[mode];
                for i in 0..d {
                    let mut v = mu[i];
                    for j in 0..=i {
                        v += l[(i, j)] * z[j];
                    }
                    out.push(v);
                }
            }
            out
        });
        SampleSet::new(d, chunks.into_iter().flatten().collect())
    }
}

/// `x -> matrix (x - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub center: Vec<f64>,
    /// Row-major `out_dim x in_dim`.
    pub matrix: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.out_dim) {
            let row = &self.matrix[i * self.in_dim..(i + 1) * self.in_dim];
            *o = row
                .iter()
                .zip(x.iter().zip(&self.center))
                .map(|(a, (xv, c))| a * (xv - c))
                .sum();
        }
    }
}

/// Output of [`pca_whiten`].
#[derive(Debug, Clone)]
pub struct Whitening {
    pub whitened: SampleSet,
    pub transform: AffineMap,
    /// Variance fraction carried by each kept mode, descending.
    pub retained_energy: Vec<f64>,
}

/// PCA whitening `xi = Gamma^{-1/2} Q^T (r - mean)`.
///
/// With `energy = Some(f)` only the leading modes whose cumulative variance
/// fraction first reaches `f` are kept.
pub fn pca_whiten(raw: &SampleSet, energy: Option<f64>) -> Result<Whitening> {
    let d = raw.dim();
    if raw.len() <= d {
        return Err(Error::RankDeficient(format!(
            "{} points cannot whiten {d} dimensions",
            raw.len()
        )));
    }
    let mean = raw.mean();
    let cov = raw.covariance();
    let eig = nalgebra::SymmetricEigen::try_new(cov, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("sample covariance".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let keep = match energy {
        None => d,
        Some(f) => {
            let mut acc = 0.0;
            let mut k = 0;
            for &i in &order {
                acc += eig.eigenvalues[i].max(0.0);
                k += 1;
                if acc >= f * total {
                    break;
                }
            }
            k
        }
    };
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut matrix = Vec::with_capacity(keep * d);
    let mut retained = Vec::with_capacity(keep);
    for &i in order.iter().take(keep) {
        let lambda = eig.eigenvalues[i];
        if !(lambda > 1e-12 * top) {
            return Err(Error::RankDeficient(format!(
                "covariance has only {} significant modes, {keep} requested",
                retained.len()
            )));
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // sign: largest-magnitude entry positive
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let s = 1.0 / lambda.sqrt();
        matrix.extend(v.iter().map(|x| x * s));
        retained.push(lambda / total);
    }
    let transform = AffineMap {
        center: mean,
        matrix,
        in_dim: d,
        out_dim: keep,
    };
    let whitened = raw.map_points(keep, |x, out| transform.apply(x, out))?;
    Ok(Whitening {
        whitened,
        transform,
        retained_energy: retained,
    })
}
