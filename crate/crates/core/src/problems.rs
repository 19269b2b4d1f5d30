//! Benchmark targets: sparse monomial polynomials, the Karhunen-Loeve expansion of
//! the exponential kernel, the 1D stochastic elliptic problem and a registry that
//! maps config entries to evaluable targets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{pca_whiten, GaussianMixtureSpec, Measure, Whitening};
use crate::multi_index::MultiIndexSet;
use crate::par;

/// How the coefficients of a monomial target are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffMode {
    /// Every coefficient is one.
    Ones,
    /// `log c ~ N(0, 2)`.
    Lognormal,
    /// Full support, `c_i = eta_i / i^1.5` with `eta_i ~ U[0, 1]` and `i` counted from one.
    Decay,
}

/// `f(x) = sum_a c_a x^a` over a set of multi-indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialTarget {
    pub dim: usize,
    pub degree: usize,
    /// Graded-lex positions of the active monomials, ascending.
    pub support: Vec<usize>,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
}

impl MonomialTarget {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .filter(|(k, _)| **k > 0)
                    .map(|(k, v)| v.powi(*k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Dense graded-lex monomial coefficient vector of length `C(d+p, p)`.
    pub fn dense(&self) -> Result<Vec<f64>> {
        let n = crate::multi_index::basis_count(self.dim, self.degree)?;
        let mut out = vec![0.0; n];
        for (&k, c) in self.support.iter().zip(&self.coefficients) {
            out[k] = *c;
        }
        Ok(out)
    }
}

/// Random monomial target with `s` active terms of total degree at most `p`.
pub fn sparse_monomial_target(d: usize, p: usize, s: usize, mode: CoeffMode, seed: u64) -> Result<MonomialTarget> {
    let index = MultiIndexSet::graded_lex(d, p)?;
    let n = index.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<usize> = if mode == CoeffMode::Decay {
        (0..n).collect()
    } else {
        if s > n {
            return Err(Error::InvalidArgument(format!(
                "support size {s} exceeds the {n} monomials of degree at most {p} in {d} variables"
            )));
        }
        let mut v = sample(&mut rng, n, s).into_vec();
        v.sort_unstable();
        v
    };
    let coefficients: Vec<f64> = match mode {
        CoeffMode::Ones => vec![1.0; support.len()],
        CoeffMode::Lognormal => {
            let normal = Normal::new(0.0, 2f64.sqrt()).expect("valid normal");
            support.iter().map(|_| normal.sample(&mut rng).exp()).collect()
        }
        CoeffMode::Decay => support
            .iter()
            .map(|&k| rng.random::<f64>() / ((k + 1) as f64).powf(1.5))
            .collect(),
    };
    let exponents = support.iter().map(|&k| index.get(k).to_vec()).collect();
    Ok(MonomialTarget {
        dim: d,
        degree: p,
        support,
        exponents,
        coefficients,
    })
}

/// Parity of a Karhunen-Loeve eigenfunction about the interval midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Even,
    Odd,
}

/// Truncated KL expansion of `a(x) = a0 + sigma sum sqrt(lambda_i) phi_i(x) xi_i` on `[0, 1]`
/// for the kernel `exp(-|x - x'| / l_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlExpansion {
    pub l_c: f64,
    pub sigma: f64,
    pub a0: f64,
    pub omegas: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub branches: Vec<Branch>,
    /// Normalization constants of `phi_i`.
    pub norms: Vec<f64>,
}

const ROOT_TOL: f64 = 1e-14;

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Bracket(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= ROOT_TOL * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl KlExpansion {
    pub fn new(l_c: f64, sigma: f64, a0: f64, d: usize) -> Result<Self> {
        if !(l_c > 0.0) || !l_c.is_finite() {
            return Err(Error::InvalidArgument("correlation length must be positive".into()));
        }
        if d == 0 {
            return Err(Error::InvalidArgument("KL truncation must keep at least one term".into()));
        }
        let mut omegas = Vec::with_capacity(d);
        let mut branches = Vec::with_capacity(d);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        // with theta = omega / 2 the roots interleave: even in (k pi, k pi + pi/2), odd in (k pi + pi/2, (k+1) pi)
        let mut k = 0usize;
        while omegas.len() < d {
            let base = k as f64 * pi;
            let even = bisect(|t| 2.0 * l_c * t * t.sin() - t.cos(), base, base + half_pi)?;
            omegas.push(2.0 * even);
            branches.push(Branch::Even);
            if omegas.len() == d {
                break;
            }
            let odd = bisect(|t| t.sin() + 2.0 * l_c * t * t.cos(), base + half_pi, base + pi)?;
            omegas.push(2.0 * odd);
            branches.push(Branch::Odd);
            k += 1;
        }
        let eigenvalues = omegas.iter().map(|w| 2.0 * l_c / (l_c * l_c * w * w + 1.0)).collect();
        let norms = omegas
            .iter()
            .zip(&branches)
            .map(|(w, b)| {
                let s = w.sin() / (2.0 * w);
                let sq = match b {
                    Branch::Even => 0.5 + s,
                    Branch::Odd => 0.5 - s,
                };
                1.0 / sq.sqrt()
            })
            .collect();
        Ok(Self {
            l_c,
            sigma,
            a0,
            omegas,
            eigenvalues,
            branches,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.omegas.len()
    }

    /// Sum of the retained eigenvalues; the kernel trace is one.
    pub fn energy(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `phi_i(x)`.
    pub fn eigenfunction(&self, i: usize, x: f64) -> f64 {
        let t = x - 0.5;
        let w = self.omegas[i];
        self.norms[i]
            * match self.branches[i] {
                Branch::Even => (w * t).cos(),
                Branch::Odd => (w * t).sin(),
            }
    }

    /// `a(x; xi)`.
    pub fn field(&self, xi: &[f64], x: f64) -> f64 {
        let mut acc = 0.0;
        for (i, z) in xi.iter().enumerate() {
            acc += self.eigenvalues[i].sqrt() * self.eigenfunction(i, x) * z;
        }
        self.a0 + self.sigma * acc
    }

    /// Relative deviation of each eigenvalue from a midpoint Nystrom discretization with `n` nodes.
    pub fn nystrom_check(&self, n: usize) -> Result<Vec<f64>> {
        let reference = nystrom_eigenvalues(self.l_c, n, self.dim())?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs() / b)
            .collect())
    }
}

/// Builds the expansion and checks it against a 2000-node Nystrom discretization.
pub fn kl_exponential(l_c: f64, sigma: f64, a0: f64, d: usize) -> Result<KlExpansion> {
    let kl = KlExpansion::new(l_c, sigma, a0, d)?;
    let worst = kl.nystrom_check(2000)?.into_iter().fold(0.0, f64::max);
    if worst > 1e-4 {
        return Err(Error::Bracket(format!(
            "KL eigenvalues deviate from the Nystrom reference by {worst:e}"
        )));
    }
    Ok(kl)
}

/// Largest `count` eigenvalues of the midpoint Nystrom matrix `h exp(-|x_i - x_j| / l_c)`.
///
/// On a uniform grid the kernel matrix is `rho^|i-j|`, whose inverse is tridiagonal,
/// so its eigenvalues follow from Sturm-sequence bisection on that inverse.
pub fn nystrom_eigenvalues(l_c: f64, n: usize, count: usize) -> Result<Vec<f64>> {
    if n < 2 || count > n {
        return Err(Error::InvalidArgument("Nystrom grid too small".into()));
    }
    let h = 1.0 / n as f64;
    let rho = (-h / l_c).exp();
    let scale = 1.0 / (1.0 - rho * rho);
    let mut diag = vec![(1.0 + rho * rho) * scale; n];
    diag[0] = scale;
    diag[n - 1] = scale;
    let off = -rho * scale;
    // number of eigenvalues of the tridiagonal inverse below x
    let below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for &di in &diag[1..] {
            let qq = if q == 0.0 { f64::EPSILON } else { q };
            q = di - x - off * off / qq;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let upper = diag.iter().fold(0.0f64, |m, d| m.max(d + 2.0 * off.abs()));
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        // k-th smallest eigenvalue of the inverse
        let (mut lo, mut hi) = (0.0, upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        out.push(h / (0.5 * (lo + hi)));
    }
    Ok(out)
}

/// Gauss-Legendre rule with `n` nodes on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = crate::measure::gauss_rule_1d(crate::measure::DensityFamily::Uniform, n)
        .expect("Gauss-Legendre rule");
    // the uniform family is a probability density on [-1, 1]; rescale weights to length 2
    let nodes = (0..n).map(|i| rule.point(i)[0]).collect();
    let weights = rule.weights().iter().map(|w| 2.0 * w).collect();
    (nodes, weights)
}

const PANEL_POINTS: usize = 8;

/// Integrals of `[1, y] / D(y)` over `[a, b]` with `panels` Gauss panels.
fn panel_integrals<F: Fn(f64) -> f64>(inv_d: &F, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    if b <= a {
        return (0.0, 0.0);
    }
    let w = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        let mid = lo + 0.5 * w;
        for (t, q) in rule.0.iter().zip(&rule.1) {
            let y = mid + 0.5 * w * t;
            let v = inv_d(y) * q * 0.5 * w;
            i0 += v;
            i1 += v * y;
        }
    }
    (i0, i1)
}

/// `u(x_star; xi)` for `-(D u')' = 1`, `u(0) = u(1) = 0`, `D = exp(a)`, from the closed form
/// `u(x) = int_0^x (C - y) / D(y) dy` with `C = int y/D / int 1/D`, integrated by
/// composite Gauss panels with about `quad_n` nodes in total.
pub fn elliptic_solve(kl: &KlExpansion, xi: &[f64], x_star: f64, quad_n: usize) -> Result<f64> {
    if xi.len() != kl.dim() {
        return Err(Error::DimensionMismatch {
            expected: kl.dim(),
            found: xi.len(),
        });
    }
    if !(0.0..=1.0).contains(&x_star) {
        return Err(Error::InvalidArgument(format!("x_star = {x_star} outside [0, 1]")));
    }
    if quad_n < 64 {
        return Err(Error::InvalidArgument("quad_n must be at least 64".into()));
    }
    // reject overflow of D and report where
    let check = |y: f64| -> Result<()> {
        let a = kl.field(xi, y);
        if !a.exp().is_finite() || !(-a).exp().is_finite() || a.exp() <= 0.0 {
            return Err(Error::Coefficient { x: y, exponent: a });
        }
        Ok(())
    };
    let inv_d = |y: f64| (-kl.field(xi, y)).exp();
    let rule = gauss_legendre(PANEL_POINTS);
    let panels = (quad_n / PANEL_POINTS).max(2);
    let left = ((panels as f64 * x_star).round() as usize).clamp(1, panels - 1);
    let (j0, j1) = panel_integrals(&inv_d, 0.0, x_star, left, &rule);
    let (k0, k1) = panel_integrals(&inv_d, x_star, 1.0, panels - left, &rule);
    let i0 = j0 + k0;
    let i1 = j1 + k1;
    if !(i0.is_finite() && i1.is_finite() && i0 > 0.0) {
        // locate the offending point for the error message
        for p in 0..=quad_n {
            check(p as f64 / quad_n as f64)?;
        }
        return Err(Error::Coefficient { x: f64::NAN, exponent: f64::NAN });
    }
    let flux0 = i1 / i0;
    Ok(flux0 * j0 - j1)
}

/// GM samples mapped to zero mean and identity covariance by PCA.
pub fn dependent_input_sampler(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Whitening> {
    let raw = spec.sample(n, seed)?;
    pca_whiten(&raw, None)
}

/// Target functions addressable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Random monomial polynomial of the experiment's dimension and degree.
    Monomial {
        terms: usize,
        mode: CoeffMode,
        #[serde(default)]
        seed: u64,
        /// Overrides the experiment degree.
        #[serde(default)]
        degree: Option<usize>,
    },
    /// Single monomial `x^alpha`.
    SingleMonomial { exponents: Vec<u32> },
    /// `w . x`.
    Linear { weights: Vec<f64> },
    /// `u(x_star)` of the stochastic elliptic problem with `d` KL terms.
    Elliptic {
        l_c: f64,
        sigma: f64,
        #[serde(default = "default_a0")]
        a0: f64,
        #[serde(default = "default_x_star")]
        x_star: f64,
        #[serde(default = "default_quad_n")]
        quad_n: usize,
    },
}

fn default_a0() -> f64 {
    1.0
}
fn default_x_star() -> f64 {
    0.35
}
fn default_quad_n() -> usize {
    512
}

/// Names and one-line descriptions of the registry entries.
pub fn list_targets() -> Vec<(&'static str, &'static str)> {
    vec![
        ("monomial", "random sparse monomial polynomial (fields: terms, mode = ones | lognormal | decay, seed, degree)"),
        ("single_monomial", "one monomial x^alpha (fields: exponents)"),
        ("linear", "linear function w . x (fields: weights)"),
        ("elliptic", "u(x_star) of -(exp(a) u')' = 1 with a KL log-coefficient (fields: l_c, sigma, a0, x_star, quad_n)"),
    ]
}

/// An evaluable target.
#[derive(Debug, Clone)]
pub enum Target {
    Monomial(MonomialTarget),
    Linear(Vec<f64>),
    Elliptic {
        kl: KlExpansion,
        x_star: f64,
        quad_n: usize,
    },
}

impl TargetSpec {
    pub fn build(&self, d: usize, p: usize) -> Result<Target> {
        match self {
            TargetSpec::Monomial {
                terms,
                mode,
                seed,
                degree,
            } => Ok(Target::Monomial(sparse_monomial_target(
                d,
                degree.unwrap_or(p),
                *terms,
                *mode,
                *seed,
            )?)),
            TargetSpec::SingleMonomial { exponents } => {
                if exponents.len() != d {
                    return Err(Error::Config(format!(
                        "single_monomial has {} exponents for dimension {d}",
                        exponents.len()
                    )));
                }
                let deg: u32 = exponents.iter().sum();
                let index = MultiIndexSet::graded_lex(d, deg as usize)?;
                let pos = index.position(exponents).expect("exponent within its own degree");
                Ok(Target::Monomial(MonomialTarget {
                    dim: d,
                    degree: deg as usize,
                    support: vec![pos],
                    exponents: vec![exponents.clone()],
                    coefficients: vec![1.0],
                }))
            }
            TargetSpec::Linear { weights } => {
                if weights.len() != d {
                    return Err(Error::Config(format!(
                        "linear target has {} weights for dimension {d}",
                        weights.len()
                    )));
                }
                Ok(Target::Linear(weights.clone()))
            }
            TargetSpec::Elliptic {
                l_c,
                sigma,
                a0,
                x_star,
                quad_n,
            } => {
                if !(0.0..=1.0).contains(x_star) || *quad_n < 64 {
                    return Err(Error::Config("elliptic target needs x_star in [0, 1] and quad_n >= 64".into()));
                }
                Ok(Target::Elliptic {
                    kl: kl_exponential(*l_c, *sigma, *a0, d)?,
                    x_star: *x_star,
                    quad_n: *quad_n,
                })
            }
        }
    }
}

impl Target {
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self {
            Target::Monomial(t) => Ok(t.evaluate(x)),
            Target::Linear(w) => Ok(w.iter().zip(x).map(|(a, b)| a * b).sum()),
            Target::Elliptic { kl, x_star, quad_n } => elliptic_solve(kl, x, *x_star, *quad_n),
        }
    }

    /// Values at every point of `pts`, in point order.
    pub fn evaluate_set<M: Measure + ?Sized>(&self, pts: &M) -> Result<Vec<f64>> {
        par::try_map_range(pts.len(), |i| self.evaluate(pts.point(i)))
    }
}
