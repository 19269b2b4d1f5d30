use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// One-dimensional reference densities, each normalized as a probability measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFamily {
    /// Unit Gaussian; orthonormal family: probabilists' Hermite.
    Gaussian,
    /// Uniform on `[-1, 1]`; Legendre.
    Uniform,
    /// `1 / (pi sqrt(1 - x^2))` on `(-1, 1)`; Chebyshev of the first kind.
    Arcsine,
    /// `exp(-x)` on `[0, inf)`; Laguerre.
    Exponential,
}

impl DensityFamily {
    pub const ALL: [DensityFamily; 4] = [
        DensityFamily::Gaussian,
        DensityFamily::Uniform,
        DensityFamily::Arcsine,
        DensityFamily::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DensityFamily::Gaussian => "gaussian",
            DensityFamily::Uniform => "uniform",
            DensityFamily::Arcsine => "arcsine",
            DensityFamily::Exponential => "exponential",
        }
    }

    /// Name of the associated orthogonal polynomial family.
    pub fn polynomial_name(self) -> &'static str {
        match self {
            DensityFamily::Gaussian => "hermite",
            DensityFamily::Uniform => "legendre",
            DensityFamily::Arcsine => "chebyshev",
            DensityFamily::Exponential => "laguerre",
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, DensityFamily::Exponential)
    }

    /// Monic three-term recurrence `p_{k+1} = (x - a_k) p_k - b_k p_{k-1}`; returns `(a_k, b_k)`.
    pub fn recurrence(self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match self {
            DensityFamily::Gaussian => (0.0, kf),
            DensityFamily::Uniform => (0.0, kf * kf / (4.0 * kf * kf - 1.0)),
            DensityFamily::Arcsine => (
                0.0,
                match k {
                    0 => 0.0,
                    1 => 0.5,
                    _ => 0.25,
                },
            ),
            DensityFamily::Exponential => (2.0 * kf + 1.0, kf * kf),
        }
    }

    /// Monomial coefficients (ascending powers) of the orthonormal polynomials of degree `0..=n`.
    ///
    /// Leading coefficients are positive.
    pub fn orthonormal_coefficients(self, n: usize) -> Vec<Vec<f64>> {
        let mut monic: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        monic.push(vec![1.0]);
        for k in 0..n {
            let (a, b) = self.recurrence(k);
            let mut next = vec![0.0; k + 2];
            for (i, &c) in monic[k].iter().enumerate() {
                next[i + 1] += c;
                next[i] -= a * c;
            }
            if k > 0 {
                for (i, &c) in monic[k - 1].iter().enumerate() {
                    next[i] -= b * c;
                }
            }
            monic.push(next);
        }
        let mut norm_sq = 1.0;
        monic
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                if k > 0 {
                    norm_sq *= self.recurrence(k).1;
                }
                let s = norm_sq.sqrt();
                p.into_iter().map(|c| c / s).collect()
            })
            .collect()
    }

    /// Closed-form moment `E[x^k]`.
    pub fn moment(self, k: u32) -> f64 {
        match self {
            DensityFamily::Gaussian => {
                if k % 2 == 1 {
                    0.0
                } else {
                    (1..k).step_by(2).map(|i| i as f64).product()
                }
            }
            DensityFamily::Uniform => {
                if k % 2 == 1 {
                    0.0
                } else {
                    1.0 / (k as f64 + 1.0)
                }
            }
            DensityFamily::Arcsine => {
                if k % 2 == 1 {
                    0.0
                } else {
                    // C(2m, m) / 4^m
                    let m = k / 2;
                    (1..=m).fold(1.0, |acc, i| acc * (m + i) as f64 / (4.0 * i as f64))
                }
            }
            DensityFamily::Exponential => (1..=k).map(|i| i as f64).product(),
        }
    }

    pub fn variance(self) -> f64 {
        self.moment(2) - self.moment(1).powi(2)
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            DensityFamily::Gaussian => StandardNormal.sample(rng),
            DensityFamily::Uniform => rng.random_range(-1.0..1.0),
            DensityFamily::Arcsine => (std::f64::consts::PI * rng.random::<f64>()).cos(),
            DensityFamily::Exponential => Exp1.sample(rng),
        }
    }
}

impl fmt::Display for DensityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DensityFamily {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "hermite" => Ok(DensityFamily::Gaussian),
            "uniform" | "legendre" => Ok(DensityFamily::Uniform),
            "arcsine" | "chebyshev" => Ok(DensityFamily::Arcsine),
            "exponential" | "laguerre" => Ok(DensityFamily::Exponential),
            other => Err(crate::error::Error::Config(format!(
                "unknown density family '{other}'"
            ))),
        }
    }
}
