//! Probability measures: weighted sample sets, product densities with Gauss
//! quadrature, and Gaussian-mixture generators.

mod family;
mod mixture;
mod quadrature;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use family::DensityFamily;
pub use mixture::{pca_whiten, AffineMap, GaussianMixtureSpec, Whitening};
pub use quadrature::{
    gauss_rule_1d, smolyak_rule, smolyak_rule_mixed, tensor_rule, QuadratureRule,
    DEFAULT_NODE_CAP,
};

/// Anything that supplies weighted nodes in `R^d`.
pub trait Measure: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn point(&self, k: usize) -> &[f64];
    fn weights(&self) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weighted point cloud standing in for an unknown input distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl SampleSet {
    /// Uniformly weighted set from row-major coordinates.
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("sample dimension must be at least 1".into()));
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: points.len() % dim,
            });
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::InvalidArgument("sample set is empty".into()));
        }
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Set with explicit probability weights (non-negative, summing to 1).
    pub fn with_weights(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut set = Self::new(dim, points)?;
        if weights.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        set.weights = weights;
        Ok(set)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::new(dim, flat)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| w == u)
    }

    /// Uniformly weighted subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut flat = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
            }
            flat.extend_from_slice(self.point(i));
        }
        Self::new(self.dim, flat)
    }

    /// First and second halves (the first gets the extra point when the count is odd).
    pub fn split_halves(&self) -> Result<(Self, Self)> {
        let n = self.len();
        if n < 2 {
            return Err(Error::InvalidArgument("cannot split fewer than two points".into()));
        }
        let h = n.div_ceil(2);
        let first: Vec<usize> = (0..h).collect();
        let second: Vec<usize> = (h..n).collect();
        Ok((self.subset(&first)?, self.subset(&second)?))
    }

    /// Applies `f` to every point, keeping weights. `f` writes a point of dimension `out_dim`.
    pub fn map_points<F>(&self, out_dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync + Send,
    {
        let n = self.len();
        let chunks = crate::par::map_chunks(n, crate::par::CHUNK, |s, e| {
            let mut out = vec![0.0; (e - s) * out_dim];
            for (r, k) in (s..e).enumerate() {
                f(self.point(k), &mut out[r * out_dim..(r + 1) * out_dim]);
            }
            out
        });
        let points: Vec<f64> = chunks.into_iter().flatten().collect();
        let mut set = Self::new(out_dim, points)?;
        set.weights = self.weights.clone();
        Ok(set)
    }

    /// Weighted mean of every coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for k in 0..self.len() {
            let w = self.weights[k];
            for (j, x) in self.point(k).iter().enumerate() {
                m[j] += w * x;
            }
        }
        m
    }

    /// Weighted (population) covariance.
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let mean = self.mean();
        let mut g = crate::linalg::weighted_gram(self.len(), self.dim, &self.weights, |k, out| {
            for (j, x) in self.point(k).iter().enumerate() {
                out[j] = x - mean[j];
            }
        });
        crate::linalg::symmetrize(&mut g);
        g
    }

    /// Reads `dim=<d>` headed CSV; a row of `d + 1` fields carries a trailing weight.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("empty sample file".into()))??;
        let dim = parse_dim_header(header.get(0).unwrap_or(""))?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut weighted = None;
        for (line, rec) in records.enumerate() {
            let rec = rec?;
            let has_weight = match rec.len() {
                n if n == dim => false,
                n if n == dim + 1 => true,
                n => {
                    return Err(Error::Parse(format!(
                        "row {}: expected {dim} or {} fields, found {n}",
                        line + 2,
                        dim + 1
                    )))
                }
            };
            if *weighted.get_or_insert(has_weight) != has_weight {
                return Err(Error::Parse("weight column present on some rows only".into()));
            }
            for (j, field) in rec.iter().enumerate() {
                let v = parse_f64(field, line + 2)?;
                if j < dim {
                    points.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        if weighted == Some(true) {
            Self::with_weights(dim, points, weights)
        } else {
            Self::new(dim, points)
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W, include_weights: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record([format!("dim={}", self.dim)])?;
        for k in 0..self.len() {
            let mut row: Vec<String> = self.point(k).iter().map(|x| fmt_f64(*x)).collect();
            if include_weights {
                row.push(fmt_f64(self.weights[k]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path, include_weights: bool) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, include_weights)
    }
}

impl Measure for SampleSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `sum_k w_k f(x_k) g(x_k)`; any non-finite function value is an error.
pub fn inner_product<M, F, G>(f: F, g: G, m: &M) -> Result<f64>
where
    M: Measure + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync + Send,
    G: Fn(&[f64]) -> f64 + Sync + Send,
{
    let w = m.weights();
    let parts = crate::par::map_chunks(m.len(), crate::par::CHUNK, |s, e| {
        let mut acc = 0.0;
        for (k, &wk) in w.iter().enumerate().take(e).skip(s) {
            let x = m.point(k);
            let fv = f(x);
            if !fv.is_finite() {
                return Err(Error::NonFinite { index: k, value: fv });
            }
            let gv = g(x);
            if !gv.is_finite() {
                return Err(Error::NonFinite { index: k, value: gv });
            }
            acc += wk * fv * gv;
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Formats with 17 significant digits so that values survive a text round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse '{field}' as a number")))
}

pub(crate) fn parse_dim_header(field: &str) -> Result<usize> {
    field
        .strip_prefix("dim=")
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Parse(format!("expected header 'dim=<d>', found '{field}'")))
}
