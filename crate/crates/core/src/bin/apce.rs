//! Command-line front end: experiments, basis construction, diagnostics and prediction.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 computation error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use apce_core::basis::{classical, gram_schmidt_discrete, near_orthonormal, InputScaling, NearMode, PolynomialBasis};
use apce_core::diagnostics::{basis_bound_ladder, gram_deviation, null_space_probe, random_support, ric_constants};
use apce_core::harness::run_config_file;
use apce_core::measure::{fmt_f64, DensityFamily, Measure, SampleSet};
use apce_core::problems::list_targets;
use apce_core::rotation::Surrogate;
use apce_core::sparse_solver::assemble_measurement_matrix;
use apce_core::{Error, Result};

#[derive(Parser)]
#[command(name = "apce", version, about = "Data-driven polynomial chaos surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Exact,
    Near,
    NearGrouped,
    Hermite,
    Legendre,
    Chebyshev,
    Laguerre,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a basis on a CSV sample set and write it as JSON.
    BuildBasis {
        /// `dim=`-headed CSV of construction points.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        degree: usize,
        #[arg(long, value_enum, default_value = "exact")]
        kind: Kind,
        /// For classical kinds: map each coordinate onto [-1, 1] from the sample range.
        #[arg(long)]
        min_max: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gram deviation, basis bound and restricted isometry diagnostics for a basis.
    Diagnose {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Tail levels of the basis bound.
        #[arg(long, value_delimiter = ',', default_values_t = vec![3.0, 4.0, 5.0, 6.0])]
        m_sigma: Vec<f64>,
        /// Support size for the restricted isometry constants of the first `--rows` points.
        #[arg(long)]
        ric_s: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        /// Number of null-space vectors to probe for the same support.
        #[arg(long, default_value_t = 0)]
        null_vectors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved surrogate at CSV points.
    Predict {
        surrogate: PathBuf,
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in target functions.
    ListTargets,
}

#[derive(Serialize)]
struct Diagnosis {
    terms: usize,
    points: usize,
    gram_deviation: f64,
    bound: Vec<(f64, f64)>,
    bound_monotone: bool,
    ric: Option<apce_core::diagnostics::RicReport>,
    /// Kernel vectors violating the null space property on the support.
    null_space_found: Option<usize>,
}

fn build_basis(samples: &Path, degree: usize, kind: Kind, min_max: bool) -> Result<PolynomialBasis> {
    let s = SampleSet::load(samples)?;
    let d = s.dim();
    let family = match kind {
        Kind::Exact => return gram_schmidt_discrete(&s, d, degree),
        Kind::Near => return Ok(near_orthonormal(&s, d, degree, NearMode::Pairwise)?.basis),
        Kind::NearGrouped => return Ok(near_orthonormal(&s, d, degree, NearMode::Grouped)?.basis),
        Kind::Hermite => DensityFamily::Gaussian,
        Kind::Legendre => DensityFamily::Uniform,
        Kind::Chebyshev => DensityFamily::Arcsine,
        Kind::Laguerre => DensityFamily::Exponential,
    };
    let scaling = if min_max { Some(InputScaling::min_max(&s)?) } else { None };
    classical(&vec![family; d], degree, scaling)
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    basis: &Path,
    samples: &Path,
    m_sigma: &[f64],
    ric_s: Option<usize>,
    rows: Option<usize>,
    null_vectors: usize,
    seed: u64,
) -> Result<Diagnosis> {
    let b = PolynomialBasis::load(basis)?;
    let s = SampleSet::load(samples)?;
    if s.dim() != b.dim() {
        return Err(Error::Config(format!("samples have dimension {}, basis {}", s.dim(), b.dim())));
    }
    let ladder = basis_bound_ladder(&b, &s, m_sigma)?;
    let (ric, found) = match ric_s {
        Some(k) => {
            let m = rows.unwrap_or(s.len()).min(s.len());
            let a = assemble_measurement_matrix(&b, &s.subset(&(0..m).collect::<Vec<_>>())?)?;
            let t = random_support(b.len(), k, seed)?;
            let ric = ric_constants(&a, &t, apce_core::diagnostics::DEFAULT_RIC_BUDGET, seed)?;
            let found = if null_vectors > 0 {
                Some(null_space_probe(&a, &t, null_vectors, seed, 100)?.vectors.len())
            } else {
                None
            };
            (Some(ric), found)
        }
        None => (None, None),
    };
    Ok(Diagnosis {
        terms: b.len(),
        points: s.len(),
        gram_deviation: gram_deviation(&b, &s)?,
        bound: ladder.m_sigma.iter().copied().zip(ladder.bound.iter().copied()).collect(),
        bound_monotone: ladder.monotone,
        ric,
        null_space_found: found,
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn predict(surrogate: &Path, points: &Path, out: Option<&Path>) -> Result<()> {
    let s = Surrogate::load(surrogate)?;
    let pts = SampleSet::load(points)?;
    if pts.dim() != s.dim() {
        return Err(Error::Config(format!("points have dimension {}, surrogate {}", pts.dim(), s.dim())));
    }
    let values = s.evaluate_set(&pts)?;
    let mut text = String::from("value\n");
    for v in values {
        text.push_str(&fmt_f64(v));
        text.push('\n');
    }
    emit(&text, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let r = run_config_file(&config, out.as_deref())?;
            for c in &r.curves {
                let tag = if c.rotated { "rotated" } else { "unrotated" };
                println!("{:<14} {:<10} M={:<5} median={} mean={}", c.basis, tag, c.m, fmt_f64(c.median), fmt_f64(c.mean));
            }
        }
        Command::BuildBasis {
            samples,
            degree,
            kind,
            min_max,
            out,
        } => {
            let b = build_basis(&samples, degree, kind, min_max)?;
            b.save(&out)?;
            println!("{} terms written to {}", b.len(), out.display());
        }
        Command::Diagnose {
            basis,
            samples,
            m_sigma,
            ric_s,
            rows,
            null_vectors,
            seed,
            out,
        } => {
            let d = diagnose(&basis, &samples, &m_sigma, ric_s, rows, null_vectors, seed)?;
            emit(&(serde_json::to_string_pretty(&d)? + "\n"), out.as_deref())?;
        }
        Command::Predict { surrogate, points, out } => predict(&surrogate, &points, out.as_deref())?,
        Command::ListTargets => {
            for (name, about) in list_targets() {
                println!("{name:<16} {about}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
