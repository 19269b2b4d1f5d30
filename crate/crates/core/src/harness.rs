//! Reproducible experiment runner behind the `apce` binary.
//!
//! A TOML config names the input measure, target, bases, training-size ladder and
//! trial count. Samples are split in half: the first half builds the bases, training
//! sets are drawn from the second half, and the rest of the second half scores each
//! fit. Outputs are `trials.csv`, `curves.csv` and `report.json`; identical configs
//! produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{classical, NearMode, PolynomialBasis};
use crate::diagnostics::{basis_bound_ladder, gram_deviation, random_support, ric_constants, SupportSpec};
use crate::error::{Error, Result};
use crate::measure::{fmt_f64, pca_whiten, DensityFamily, GaussianMixtureSpec, Measure, QuadratureRule, SampleSet};
use crate::par;
use crate::problems::TargetSpec;
use crate::rotation::{
    density_rule, fit_density_from, fit_discrete_from, BasisKind, DensityRefit, FitOptions, PipelineResult,
    ScalingMode, Surrogate,
};
use crate::sparse_solver::{assemble_measurement_matrix, relative_l2_error, SolverOptions};

/// Where the input samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// Random centred Gaussian mixture in `d` dimensions.
    GaussianMixture {
        #[serde(default = "default_modes")]
        modes: usize,
        samples: usize,
        /// PCA-whiten the raw draws before use.
        #[serde(default)]
        whiten: bool,
    },
    /// Independent coordinates from one reference density.
    Density { family: DensityFamily, samples: usize },
    /// Points from a `dim=`-headed CSV file, resolved against the config directory.
    Csv { path: PathBuf },
}

fn default_modes() -> usize {
    3
}

/// One basis recipe compared in the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisEntry {
    Exact,
    Near {
        #[serde(default)]
        mode: NearMode,
    },
    Classical {
        family: DensityFamily,
        #[serde(default)]
        scaling: ScalingMode,
    },
    /// Classical basis of the input density with quadrature-based rotation.
    Density {
        #[serde(default)]
        refit: DensityRefit,
        #[serde(default)]
        level: Option<usize>,
    },
}

impl BasisEntry {
    pub fn label(&self) -> String {
        match self {
            BasisEntry::Exact => "exact".into(),
            BasisEntry::Near { mode } => match mode {
                NearMode::Pairwise => "near".into(),
                NearMode::Grouped => "near-grouped".into(),
            },
            BasisEntry::Classical { family, .. } => family.polynomial_name().to_lowercase(),
            BasisEntry::Density { refit, .. } => match refit {
                DensityRefit::Rebuild => "density".into(),
                DensityRefit::Reuse => "density-reuse".into(),
            },
        }
    }

    fn discrete_kind(&self) -> Option<BasisKind> {
        match self {
            BasisEntry::Exact => Some(BasisKind::Exact),
            BasisEntry::Near { mode } => Some(BasisKind::Near { mode: *mode }),
            BasisEntry::Classical { family, scaling } => Some(BasisKind::Classical {
                family: *family,
                scaling: *scaling,
            }),
            BasisEntry::Density { .. } => None,
        }
    }
}

/// Noise level and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Training values receive independent `U[-noise, noise]` perturbations.
    #[serde(default)]
    pub noise: f64,
    /// Residual bound; defaults to `noise * sqrt(M)`, the worst case of the perturbation.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            noise: 0.0,
            sigma: None,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

impl SolverSection {
    fn sigma_for(&self, m: usize) -> f64 {
        self.sigma.unwrap_or(self.noise * (m as f64).sqrt())
    }

    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            ..SolverOptions::default()
        }
    }
}

/// Optional diagnostics attached to the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Gram deviation of each unrotated basis on the construction set.
    #[serde(default)]
    pub gram: bool,
    /// Tail levels for the basis bound on the scoring half.
    #[serde(default)]
    pub bound_m_sigma: Vec<f64>,
    /// Support size for the restricted isometry indicator of each training matrix.
    #[serde(default)]
    pub ric_s: Option<usize>,
    #[serde(default = "default_ric_budget")]
    pub ric_budget: u64,
}

fn default_ric_budget() -> u64 {
    crate::diagnostics::DEFAULT_RIC_BUDGET
}

/// Parsed experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub d: usize,
    pub p: usize,
    pub input: InputSpec,
    pub target: TargetSpec,
    pub basis: Vec<BasisEntry>,
    /// Rotate-and-refit rounds; zero disables rotation.
    #[serde(default)]
    pub rotations: usize,
    pub m_ladder: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    /// Output directory, resolved against the working directory.
    pub outputs: PathBuf,
    /// Write the last trial's surrogates at the largest `M`.
    #[serde(default)]
    pub save_surrogates: bool,
}

fn default_trials() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name '{}' must be non-empty without path separators", self.name));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.basis.is_empty() {
            return bad("at least one [[basis]] entry is required".into());
        }
        let mut labels: Vec<String> = self.basis.iter().map(|b| b.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate basis entries".into());
        }
        if self.m_ladder.is_empty() || self.m_ladder.contains(&0) {
            return bad("m_ladder must list positive training sizes".into());
        }
        if self.m_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return bad("m_ladder must be strictly increasing".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.rotations > 0 && self.p == 0 {
            return bad("rotation needs p >= 1".into());
        }
        let s = &self.solver;
        if !(s.noise >= 0.0 && s.noise.is_finite()) {
            return bad("solver.noise must be finite and non-negative".into());
        }
        if let Some(sigma) = s.sigma {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("solver.sigma must be finite and non-negative".into());
            }
        }
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return bad("solver.tol and solver.max_iter must be positive".into());
        }
        if self.diagnostics.bound_m_sigma.iter().any(|v| !v.is_finite()) {
            return bad("diagnostics.bound_m_sigma must be finite".into());
        }
        if self.diagnostics.ric_s == Some(0) {
            return bad("diagnostics.ric_s must be positive".into());
        }
        match &self.input {
            InputSpec::GaussianMixture { modes, samples, .. } => {
                if *modes == 0 {
                    return bad("input.modes must be positive".into());
                }
                self.check_samples(*samples)?;
            }
            InputSpec::Density { samples, .. } => self.check_samples(*samples)?,
            InputSpec::Csv { .. } => {}
        }
        let density = matches!(self.input, InputSpec::Density { .. });
        if self.basis.iter().any(|b| matches!(b, BasisEntry::Density { .. })) && !density {
            return bad("a density basis needs a density input".into());
        }
        self.target
            .build(self.d, self.p)
            .map_err(|e| Error::Config(format!("target: {e}")))?;
        Ok(())
    }

    fn check_samples(&self, samples: usize) -> Result<()> {
        let largest = *self.m_ladder.last().unwrap_or(&0);
        if samples / 2 <= largest {
            return Err(Error::Config(format!(
                "input.samples = {samples} leaves no scoring points beyond M = {largest}"
            )));
        }
        Ok(())
    }
}

/// Aggregate over the trials at one `(basis, rotated, M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub basis: String,
    pub rotated: bool,
    pub m: usize,
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
    pub converged: usize,
    pub mean_ric: Option<f64>,
}

/// One fitted surrogate scored on held-out points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub basis: String,
    pub rotated: bool,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub l2_error: f64,
    pub l1_error: f64,
    pub coeff_l1: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ric: Option<f64>,
}

/// Diagnostics of one unrotated basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDiagnostics {
    pub basis: String,
    pub terms: usize,
    pub gram_deviation: Option<f64>,
    pub bound: Vec<(f64, f64)>,
    pub bound_monotone: Option<bool>,
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub status: String,
    pub error: Option<String>,
    pub config_sha256: String,
    pub version: String,
    pub parallel: bool,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub construction_points: usize,
    pub scoring_pool: usize,
    pub bases: Vec<BasisDiagnostics>,
    pub curves: Vec<CurvePoint>,
}

/// Reads, validates and runs a config file; outputs go to `out` or the configured directory.
pub fn run_config_file(path: &Path, out: Option<&Path>) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.outputs.clone());
    run_experiment(&cfg, &text, base, &out)
}

/// Seed for trial `t` at ladder position `k`; independent of the basis so every basis
/// sees the same training sets.
pub fn trial_seed(seed: u64, k: usize, t: usize) -> u64 {
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + ((k as u64) << 32 | t as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Input samples for the config: all points, before the construction/scoring split.
pub fn draw_input(cfg: &ExperimentConfig, base: &Path) -> Result<SampleSet> {
    let s = match &cfg.input {
        InputSpec::GaussianMixture { modes, samples, whiten } => {
            let spec = GaussianMixtureSpec::random_centered(cfg.d, *modes, cfg.seed)?;
            let raw = spec.sample(*samples, cfg.seed.wrapping_add(1))?;
            if *whiten {
                pca_whiten(&raw, None)?.whitened
            } else {
                raw
            }
        }
        InputSpec::Density { family, samples } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let pts = (0..samples * cfg.d).map(|_| family.sample(&mut rng)).collect();
            SampleSet::new(cfg.d, pts)?
        }
        InputSpec::Csv { path } => {
            let full = base.join(path);
            let s = SampleSet::load(&full).map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
            if s.dim() != cfg.d {
                return Err(Error::Config(format!("{} has dimension {}, config says {}", full.display(), s.dim(), cfg.d)));
            }
            let largest = *cfg.m_ladder.last().unwrap_or(&0);
            if s.len() / 2 <= largest {
                return Err(Error::Config(format!("{} has too few points for M = {largest}", full.display())));
            }
            s
        }
    };
    Ok(s)
}

struct Prepared {
    entry: BasisEntry,
    label: String,
    basis: PolynomialBasis,
    rule: Option<QuadratureRule>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    construction: SampleSet,
    pool: SampleSet,
    pool_values: Vec<f64>,
}

fn prepare(cfg: &ExperimentConfig, construction: &SampleSet) -> Result<Vec<Prepared>> {
    cfg.basis
        .iter()
        .map(|entry| {
            let (basis, rule) = match entry.discrete_kind() {
                Some(kind) => (kind.build(construction, cfg.p)?, None),
                None => {
                    let InputSpec::Density { family, .. } = &cfg.input else {
                        return Err(Error::Config("a density basis needs a density input".into()));
                    };
                    let fams = vec![*family; cfg.d];
                    let BasisEntry::Density { level, .. } = entry else { unreachable!() };
                    (classical(&fams, cfg.p, None)?, Some(density_rule(&fams, cfg.p, *level)?))
                }
            };
            Ok(Prepared {
                entry: entry.clone(),
                label: entry.label(),
                basis,
                rule,
            })
        })
        .collect()
}

fn diagnose(cfg: &ExperimentConfig, prepared: &[Prepared], ctx: &Context) -> Result<Vec<BasisDiagnostics>> {
    prepared
        .iter()
        .map(|p| {
            let gram_deviation = if cfg.diagnostics.gram {
                Some(gram_deviation(&p.basis, &ctx.construction)?)
            } else {
                None
            };
            let (bound, bound_monotone) = if cfg.diagnostics.bound_m_sigma.is_empty() {
                (Vec::new(), None)
            } else {
                let l = basis_bound_ladder(&p.basis, &ctx.pool, &cfg.diagnostics.bound_m_sigma)?;
                (l.m_sigma.iter().copied().zip(l.bound.iter().copied()).collect(), Some(l.monotone))
            };
            Ok(BasisDiagnostics {
                basis: p.label.clone(),
                terms: p.basis.len(),
                gram_deviation,
                bound,
                bound_monotone,
            })
        })
        .collect()
}

struct TrialData {
    seed: u64,
    training: SampleSet,
    values: Vec<f64>,
    scoring: SampleSet,
    truth: Vec<f64>,
}

/// Training indices are drawn from the pool; the scoring set is its complement.
fn trial_data(ctx: &Context, m: usize, seed: u64) -> Result<TrialData> {
    let n = ctx.pool.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    train_idx.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let score_idx: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    assert!(score_idx.iter().all(|&i| !in_train[i]) && score_idx.len() + m == n);
    let noise = ctx.cfg.solver.noise;
    let values = train_idx
        .iter()
        .map(|&i| {
            let e = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            ctx.pool_values[i] + e
        })
        .collect();
    Ok(TrialData {
        seed,
        training: ctx.pool.subset(&train_idx)?,
        values,
        scoring: ctx.pool.subset(&score_idx)?,
        truth: score_idx.iter().map(|&i| ctx.pool_values[i]).collect(),
    })
}

fn record(label: &str, rotated: bool, m: usize, trial: usize, data: &TrialData, s: &Surrogate, ric: Option<f64>) -> Result<TrialRecord> {
    let approx = s.evaluate_set(&data.scoring)?;
    let l2_error = relative_l2_error(&data.truth, &approx, data.scoring.weights())?;
    let num: f64 = data.truth.iter().zip(&approx).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = data.truth.iter().map(|a| a.abs()).sum();
    let l1_error = if den > 0.0 { num / den } else { num };
    Ok(TrialRecord {
        basis: label.to_string(),
        rotated,
        m,
        trial,
        seed: data.seed,
        l2_error,
        l1_error,
        coeff_l1: s.meta().l1_norm,
        iterations: s.meta().iterations,
        converged: s.meta().converged,
        ric,
    })
}

fn run_trial(ctx: &Context, prepared: &[Prepared], m: usize, trial: usize, seed: u64) -> Result<Vec<(TrialRecord, Option<Surrogate>)>> {
    let cfg = ctx.cfg;
    let data = trial_data(ctx, m, seed)?;
    let opts = FitOptions {
        p: cfg.p,
        sigma: cfg.solver.sigma_for(m),
        solver: cfg.solver.options(),
        rotations: cfg.rotations,
    };
    let mut out = Vec::new();
    for p in prepared {
        let ric = match cfg.diagnostics.ric_s {
            Some(s) if s < p.basis.len() => {
                let a = assemble_measurement_matrix(&p.basis, &data.training)?;
                let t: SupportSpec = random_support(p.basis.len(), s, seed)?;
                Some(ric_constants(&a, &t, cfg.diagnostics.ric_budget, seed)?.indicator)
            }
            _ => None,
        };
        let result: PipelineResult = match (&p.entry, p.entry.discrete_kind()) {
            (_, Some(kind)) => {
                fit_discrete_from(&ctx.construction, p.basis.clone(), &data.training, &data.values, &kind, &opts)?
            }
            (BasisEntry::Density { refit, .. }, None) => {
                let rule = p.rule.as_ref().expect("density entries carry a rule");
                fit_density_from(rule, p.basis.clone(), &data.training, &data.values, &opts, *refit)?
            }
            _ => unreachable!("only density entries lack a discrete kind"),
        };
        let keep = cfg.save_surrogates && trial + 1 == cfg.trials && Some(&m) == cfg.m_ladder.last();
        let r = record(&p.label, false, m, trial, &data, &result.unrotated, ric)?;
        out.push((r, keep.then(|| result.unrotated.clone())));
        if let Some(last) = result.rotated.last() {
            let r = record(&p.label, true, m, trial, &data, last, None)?;
            out.push((r, keep.then(|| last.clone())));
        }
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, median and quartiles per `(basis, rotated, M)`, in first-appearance order.
pub fn aggregate(records: &[TrialRecord]) -> Vec<CurvePoint> {
    let mut keys: Vec<(String, bool, usize)> = Vec::new();
    for r in records {
        let k = (r.basis.clone(), r.rotated, r.m);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(basis, rotated, m)| {
            let group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.basis == basis && r.rotated == rotated && r.m == m)
                .collect();
            let mut e: Vec<f64> = group.iter().map(|r| r.l2_error).collect();
            e.sort_by(f64::total_cmp);
            let rics: Vec<f64> = group.iter().filter_map(|r| r.ric).collect();
            CurvePoint {
                basis,
                rotated,
                m,
                trials: e.len(),
                mean: e.iter().sum::<f64>() / e.len() as f64,
                median: quantile(&e, 0.5),
                q25: quantile(&e, 0.25),
                q75: quantile(&e, 0.75),
                min: e[0],
                max: e[e.len() - 1],
                converged: group.iter().filter(|r| r.converged).count(),
                mean_ric: (!rics.is_empty()).then(|| rics.iter().sum::<f64>() / rics.len() as f64),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trials_csv<W: Write>(w: W, records: &[TrialRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "basis", "rotated", "m", "trial", "seed", "l2_error", "l1_error", "coeff_l1", "iterations", "converged", "ric",
    ])?;
    for r in records {
        out.write_record([
            r.basis.clone(),
            r.rotated.to_string(),
            r.m.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            fmt_f64(r.l2_error),
            fmt_f64(r.l1_error),
            fmt_f64(r.coeff_l1),
            r.iterations.to_string(),
            r.converged.to_string(),
            opt(r.ric),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_curves_csv<W: Write>(w: W, curves: &[CurvePoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "basis", "rotated", "m", "trials", "mean", "median", "q25", "q75", "min", "max", "converged", "mean_ric",
    ])?;
    for c in curves {
        out.write_record([
            c.basis.clone(),
            c.rotated.to_string(),
            c.m.to_string(),
            c.trials.to_string(),
            fmt_f64(c.mean),
            fmt_f64(c.median),
            fmt_f64(c.q25),
            fmt_f64(c.q75),
            fmt_f64(c.min),
            fmt_f64(c.max),
            c.converged.to_string(),
            opt(c.mean_ric),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs a validated config; `config_text` is hashed into the report.
///
/// On a computation error the outputs hold the completed ladder points and the
/// report status is `partial`; the error is then returned.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, base: &Path, out: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let all = draw_input(cfg, base)?;
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    let (construction, pool) = all.split_halves()?;
    let target = cfg.target.build(cfg.d, cfg.p)?;
    let mut report = ExperimentReport {
        name: cfg.name.clone(),
        status: "partial".into(),
        error: None,
        config_sha256: Sha256::digest(config_text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
        parallel: par::MODE == "parallel",
        seed: cfg.seed,
        trial_seeds: Vec::new(),
        construction_points: construction.len(),
        scoring_pool: pool.len(),
        bases: Vec::new(),
        curves: Vec::new(),
    };
    let mut records = Vec::new();
    let outcome = (|| -> Result<()> {
        let pool_values = target.evaluate_set(&pool)?;
        let ctx = Context {
            cfg,
            construction,
            pool,
            pool_values,
        };
        let prepared = prepare(cfg, &ctx.construction)?;
        report.bases = diagnose(cfg, &prepared, &ctx)?;
        for (k, &m) in cfg.m_ladder.iter().enumerate() {
            let seeds: Vec<u64> = (0..cfg.trials).map(|t| trial_seed(cfg.seed, k, t)).collect();
            let rows = par::try_map_range(cfg.trials, |t| run_trial(&ctx, &prepared, m, t, seeds[t]))?;
            for (r, s) in rows.into_iter().flatten() {
                if let Some(s) = s {
                    let dir = out.join("surrogates");
                    fs::create_dir_all(&dir)?;
                    let tag = if r.rotated { "-rotated" } else { "" };
                    s.save(&dir.join(format!("{}{tag}.json", r.basis)))?;
                }
                records.push(r);
            }
            report.trial_seeds.extend(seeds);
        }
        Ok(())
    })();
    report.curves = aggregate(&records);
    match &outcome {
        Ok(()) => report.status = "complete".into(),
        Err(e) => report.error = Some(e.to_string()),
    }
    write_trials_csv(fs::File::create(out.join("trials.csv"))?, &records)?;
    write_curves_csv(fs::File::create(out.join("curves.csv"))?, &report.curves)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    outcome.map(|()| report)
}
