//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs as a plain binary so the summary is always printed. Pass criterion numbers
//! (`cargo test --test acceptance -- 3 7`) to run a subset.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use apce_core::basis::{
    classical, gram_schmidt_discrete, gram_schmidt_pushforward, gram_schmidt_quadrature, near_orthonormal, InputScaling,
    NearMode,
};
use apce_core::diagnostics::{basis_bound_ladder, gram_deviation, random_support, ric_constants, DEFAULT_RIC_BUDGET};
use apce_core::harness::run_config_file;
use apce_core::linalg::spectral_norm;
use apce_core::measure::{gauss_rule_1d, pca_whiten, tensor_rule, DensityFamily, GaussianMixtureSpec, Measure, SampleSet, DEFAULT_NODE_CAP};
use apce_core::problems::{elliptic_solve, kl_exponential, nystrom_eigenvalues, KlExpansion};
use apce_core::rotation::{fit_discrete, BasisKind, FitOptions};
use apce_core::sparse_solver::{
    assemble_measurement_matrix, basis_pursuit, bpdn, relative_l1_error, RecoverySetup, SolverOptions,
};

use common::{finite_volume_elliptic, l0_exhaustive, median};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gm(d: usize, seed: u64) -> GaussianMixtureSpec {
    GaussianMixtureSpec::random_centered(d, 3, seed).unwrap()
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn ac1() -> Outcome {
    let s = gm(10, 1).sample(50_000, 2).unwrap();
    let t = Instant::now();
    let b = gram_schmidt_discrete(&s, 10, 3).unwrap();
    let dev = gram_deviation(&b, &s).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(dev < 1e-8 && secs < 60.0, format!("Gram deviation {dev:.2e} in {secs:.1} s (N = {})", b.len()))
}

fn ac2() -> Outcome {
    let (d, p) = (5, 2);
    let rule = tensor_rule(&vec![gauss_rule_1d(DensityFamily::Gaussian, 3).unwrap(); d], DEFAULT_NODE_CAP).unwrap();
    let base = gram_schmidt_quadrature(&rule, None, p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_u: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..10 {
        let q = gaussian_matrix(d, d, &mut rng) + DMatrix::identity(d, d) * 0.5;
        let rotated = gram_schmidt_pushforward(&rule, &q, p).unwrap();
        // U = E[psi'(Q z) psi(z)^T] under the rule
        let n = base.len();
        let mut u = DMatrix::<f64>::zeros(n, n);
        for k in 0..rule.len() {
            let z = rule.point(k);
            let chi: Vec<f64> = (0..d).map(|i| (0..d).map(|j| q[(i, j)] * z[j]).sum()).collect();
            let a = DVector::from_vec(rotated.evaluate(&chi).unwrap());
            let b = DVector::from_vec(base.evaluate(z).unwrap());
            u += a * b.transpose() * rule.weights()[k];
        }
        worst_u = worst_u.max(spectral_norm(&(&u * u.transpose() - DMatrix::identity(n, n))));
        let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let xi = SampleSet::from_rows(&pts).unwrap();
        let chi_rows: Vec<Vec<f64>> = pts
            .iter()
            .map(|z| (0..d).map(|i| (0..d).map(|j| q[(i, j)] * z[j]).sum()).collect())
            .collect();
        let chi = SampleSet::from_rows(&chi_rows).unwrap();
        let g_xi = base.gram(&xi).unwrap();
        let g_chi = rotated.gram(&chi).unwrap();
        let eye = DMatrix::identity(n, n);
        let gap = (spectral_norm(&(g_xi - &eye)) - spectral_norm(&(g_chi - &eye))).abs();
        worst_gap = worst_gap.max(gap);
    }
    outcome(
        worst_u < 1e-6 && worst_gap < 1e-8,
        format!("max |UU^T - I| = {worst_u:.2e}, max Gram-deviation gap = {worst_gap:.2e}"),
    )
}

fn ac3() -> Outcome {
    let t = Instant::now();
    let (d, p, s, m) = (25, 2, 5, 45);
    let all = gm(d, 3).sample(20_000, 4).unwrap();
    let (s1, s2) = all.split_halves().unwrap();
    let exact = gram_schmidt_discrete(&s1, d, p).unwrap();
    let legendre = classical(&vec![DensityFamily::Uniform; d], p, Some(InputScaling::min_max(&s1).unwrap())).unwrap();
    let n = exact.len();
    // coefficients of the data-driven basis in the Legendre basis, by projection on S1
    let a1_exact = assemble_measurement_matrix(&exact, &s1).unwrap();
    let legendre_svd = assemble_measurement_matrix(&legendre, &s1).unwrap().svd(true, true);
    let sigma = 1e-7;
    let opts = SolverOptions::default();
    let mut errs = Vec::new();
    let mut errs_legendre = Vec::new();
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let support = random_support(n, s, 400 + trial).unwrap();
        let mut c = vec![0.0; n];
        for &k in support.indices() {
            c[k] = 1.0;
        }
        let idx = rand::seq::index::sample(&mut rng, s2.len(), m).into_vec();
        let train = s2.subset(&idx).unwrap();
        let noise: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = 0.999 * sigma / noise.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = assemble_measurement_matrix(&exact, &train).unwrap();
        let b: Vec<f64> = (&a * DVector::from_column_slice(&c))
            .iter()
            .zip(&noise)
            .map(|(v, e)| v + scale * e)
            .collect();
        let r = bpdn(&RecoverySetup::new(a, b.clone(), sigma).unwrap(), &opts).unwrap();
        errs.push(relative_l1_error(&r.c, &c).unwrap());

        let f1 = &a1_exact * DVector::from_column_slice(&c);
        let c_l = legendre_svd.solve(&f1, 1e-12).unwrap();
        let al = assemble_measurement_matrix(&legendre, &train).unwrap();
        let rl = bpdn(&RecoverySetup::new(al, b, sigma).unwrap(), &opts).unwrap();
        errs_legendre.push(relative_l1_error(&rl.c, c_l.as_slice()).unwrap());
    }
    let good = errs.iter().filter(|e| **e <= 1e-5).count();
    let (med, med_l) = (median(&errs), median(&errs_legendre));
    let secs = t.elapsed().as_secs_f64();
    outcome(
        good >= 18 && med_l >= 10.0 * med && secs < 600.0,
        format!("{good}/20 trials within 1e-5; median error {med:.2e} vs Legendre {med_l:.2e}; {secs:.0} s"),
    )
}

fn ac4() -> Outcome {
    let (d, p, s) = (10, 2, 3);
    let all = gm(d, 5).sample(20_000, 6).unwrap();
    let (s1, s2) = all.split_halves().unwrap();
    let exact = gram_schmidt_discrete(&s1, d, p).unwrap();
    let legendre = classical(&vec![DensityFamily::Uniform; d], p, Some(InputScaling::min_max(&s1).unwrap())).unwrap();
    let n = exact.len();
    let ladder: Vec<usize> = (1..=16).map(|k| 25 * k).collect();
    let mut crossing = [None, None];
    let mut curves = [Vec::new(), Vec::new()];
    for &m in &ladder {
        for (which, basis) in [&exact, &legendre].into_iter().enumerate() {
            let mut total = 0.0;
            for trial in 0..20u64 {
                let seed = 1000 * m as u64 + trial;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let idx = rand::seq::index::sample(&mut rng, s2.len(), m).into_vec();
                let a = assemble_measurement_matrix(basis, &s2.subset(&idx).unwrap()).unwrap() / (m as f64).sqrt();
                let t = random_support(n, s, seed).unwrap();
                let r = ric_constants(&a, &t, DEFAULT_RIC_BUDGET, seed).unwrap();
                assert!(r.exact, "the t' search must be exhaustive at this size");
                total += r.indicator;
            }
            let mean = total / 20.0;
            curves[which].push(mean);
            if mean < 0.5 && crossing[which].is_none() {
                crossing[which] = Some(m);
            }
        }
        if crossing.iter().all(Option::is_some) {
            break;
        }
    }
    let pass = match crossing {
        [Some(a), Some(b)] => a < b,
        [Some(_), None] => true,
        _ => false,
    };
    let fmt = |c: Option<usize>| c.map_or("none".to_string(), |m| m.to_string());
    outcome(
        pass,
        format!("indicator below 0.5 at M = {} (data-driven) vs M = {} (Legendre)", fmt(crossing[0]), fmt(crossing[1])),
    )
}

fn ac5() -> Outcome {
    let levels = [3.0, 4.0, 5.0, 6.0];
    let mut wins = 0;
    let mut first = String::new();
    let mut losses = Vec::new();
    for r in 0..10u64 {
        let s = gm(25, 50 + r).sample(100_000, 60 + r).unwrap();
        let exact = gram_schmidt_discrete(&s, 25, 2).unwrap();
        let near = near_orthonormal(&s, 25, 2, NearMode::Pairwise).unwrap().basis;
        let ke = basis_bound_ladder(&exact, &s, &levels).unwrap();
        let kn = basis_bound_ladder(&near, &s, &levels).unwrap();
        let above: Vec<f64> = levels
            .iter()
            .zip(kn.bound.iter().zip(&ke.bound))
            .filter(|(_, (a, b))| a > b)
            .map(|(l, _)| *l)
            .collect();
        if above.is_empty() {
            wins += 1;
        } else {
            losses.push(format!("set {r} at M_sigma {above:?}"));
        }
        if r == 0 {
            first = format!("first set: near {:.2?} vs exact {:.2?}", kn.bound, ke.bound);
        }
    }
    let losses = if losses.is_empty() { String::new() } else { format!("; near above exact in {}", losses.join(", ")) };
    outcome(wins >= 9, format!("near bound below exact in {wins}/10 sets; {first}{losses}"))
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let raw = SampleSet::new(2, (0..2 * 4000).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let (s1, s2) = raw.split_halves().unwrap();
    let s1 = pca_whiten(&s1, None).unwrap().whitened;
    let train = s2.subset(&(0..30).collect::<Vec<_>>()).unwrap();
    let values: Vec<f64> = (0..train.len()).map(|k| train.point(k).iter().sum()).collect();
    let opts = FitOptions {
        p: 3,
        ..FitOptions::default()
    };
    let r = fit_discrete(&s1, &train, &values, &BasisKind::Exact, &opts).unwrap();
    let c = r.final_surrogate().coefficients();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let big = c.iter().filter(|v| v.abs() >= 1e-6 * norm).count();
    let second = c
        .iter()
        .map(|v| v.abs() / norm)
        .filter(|v| *v < 0.5)
        .fold(0.0, f64::max);
    outcome(big == 1, format!("{big} coefficient(s) above 1e-6 |c|; next largest {second:.1e} |c|"))
}

fn curves(dir: &Path) -> Vec<(String, bool, usize, f64)> {
    let mut rdr = csv::Reader::from_path(dir.join("curves.csv")).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1] == *"true", r[2].parse().unwrap(), r[5].parse().unwrap())
        })
        .collect()
}

fn ac7(dir: &Path) -> Outcome {
    let rows = curves(dir);
    let med = |b: &str, rot: bool, m: usize| {
        rows.iter()
            .find(|r| r.0 == b && r.1 == rot && r.2 == m)
            .map(|r| r.3)
            .expect("curve point")
    };
    let ms: Vec<usize> = {
        let mut v: Vec<usize> = rows.iter().map(|r| r.2).collect();
        v.dedup();
        v
    };
    let near_ok = ms.iter().filter(|&&m| med("near", true, m) <= med("near", false, m)).count();
    let legendre_worse = ms.iter().filter(|&&m| med("legendre", true, m) >= med("legendre", false, m)).count();
    outcome(
        ms.len() == 5 && near_ok == 5 && legendre_worse >= 3,
        format!("near improved by rotation at {near_ok}/5 M; Legendre worse after rotation at {legendre_worse}/5 M"),
    )
}

fn ac8() -> Outcome {
    let kl = kl_exponential(0.12, 1.0, 1.0, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let xi: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let u = elliptic_solve(&kl, &xi, 0.35, 512).unwrap();
        let v = finite_volume_elliptic(&kl, &xi, 0.35, 10_000);
        worst = worst.max((u - v).abs() / v.abs());
    }
    let flat = KlExpansion::new(0.12, 1.0, 0.0, 20).unwrap();
    let u0 = elliptic_solve(&flat, &[0.0; 20], 0.35, 512).unwrap();
    outcome(
        worst < 1e-5 && (u0 - 0.11375).abs() < 1e-12,
        format!("max relative deviation from finite volumes {worst:.2e}; u(0.35) = {u0:.12} at xi = 0"),
    )
}

fn ac9() -> Outcome {
    let kl = kl_exponential(0.12, 1.0, 1.0, 20).unwrap();
    let energy = kl.energy();
    let reference = nystrom_eigenvalues(0.12, 2000, 20).unwrap();
    let worst = kl
        .eigenvalues
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    outcome(
        energy > 0.91 && worst < 1e-4,
        format!("retained energy {energy:.4}; max eigenvalue deviation from Nystrom {worst:.1e}"),
    )
}

fn ac10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let opts = SolverOptions::default();
    let (mut unique, mut matched, mut converged, mut gap_ok) = (0, 0, 0, 0);
    // mismatches where the solver certified an l1 norm below that of the l0 solution
    let mut smaller_l1 = 0;
    for _ in 0..200 {
        let n = rng.random_range(8..=40usize);
        let s = rng.random_range(1..=3usize);
        // the recovery regime M >= 2 s ln N, up to square systems
        let m_min = ((2 * s) as f64 * (n as f64).ln()).ceil().min(n as f64) as usize;
        let m = rng.random_range(m_min..=n);
        let a = gaussian_matrix(m, n, &mut rng);
        let support = rand::seq::index::sample(&mut rng, n, s).into_vec();
        let mut c = DVector::zeros(n);
        for &k in &support {
            c[k] = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let b = &a * &c;
        if let Some((_, hits)) = l0_exhaustive(&a, &b, s, 1e-9) {
            if hits.len() == 1 {
                unique += 1;
                let mut l0 = vec![0.0; n];
                for (k, v) in hits[0].0.iter().zip(&hits[0].1) {
                    l0[*k] = *v;
                }
                let r = basis_pursuit(&RecoverySetup::new(a.clone(), b.iter().copied().collect(), 0.0).unwrap(), &opts).unwrap();
                let err = r.c.iter().zip(&l0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                if err <= 1e-6 * (1.0 + c.amax()) {
                    matched += 1;
                } else if r.converged && r.l1_norm < l0.iter().map(|v| v.abs()).sum::<f64>() - 1e-9 {
                    smaller_l1 += 1;
                }
            }
        }
        let noisy: Vec<f64> = b.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
        let sigma = 1e-3 * (m as f64).sqrt();
        let r = bpdn(&RecoverySetup::new(a, noisy, sigma).unwrap(), &opts).unwrap();
        if r.converged {
            converged += 1;
            if r.duality_gap <= 1e-8 * (1.0 + r.l1_norm) {
                gap_ok += 1;
            }
        }
    }
    outcome(
        unique > 0 && matched == unique && gap_ok == converged,
        format!(
            "l1 matched the unique l0 solution in {matched}/{unique} ({smaller_l1} mismatches are certified l1 minima below the l0 norm); \
             gap certified in {gap_ok}/{converged} converged denoising runs"
        ),
    )
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bundled_configs() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every bundled config once into `root/<name>/a`.
fn first_runs(root: &Path) -> Vec<(String, PathBuf, Result<(), String>)> {
    bundled_configs()
        .into_iter()
        .map(|cfg| {
            let name = cfg.file_stem().unwrap().to_string_lossy().to_string();
            let dir = root.join(&name).join("a");
            let r = run_config_file(&cfg, Some(&dir)).map(|_| ()).map_err(|e| e.to_string());
            (name, dir, r)
        })
        .collect()
}

fn ac11(root: &Path, first: &[(String, PathBuf, Result<(), String>)]) -> Outcome {
    let mut same = 0;
    let mut notes = Vec::new();
    for (name, dir_a, r) in first {
        if let Err(e) = r {
            notes.push(format!("{name}: {e}"));
            continue;
        }
        let cfg = config_dir().join(format!("{name}.toml"));
        let dir_b = root.join(name).join("b");
        if let Err(e) = run_config_file(&cfg, Some(&dir_b)) {
            notes.push(format!("{name}: {e}"));
            continue;
        }
        if snapshot(dir_a) == snapshot(&dir_b) {
            same += 1;
        } else {
            notes.push(format!("{name} differs"));
        }
    }
    outcome(
        same == first.len() && !first.is_empty(),
        format!("{same}/{} bundled configs byte-identical on replay{}", first.len(), if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if run(k) {
            let t = Instant::now();
            let o = f();
            let secs = t.elapsed().as_secs_f64();
            println!("AC{k:<2} {} {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((k, name, o, secs));
        }
    };
    record(1, "orthonormality", &mut ac1);
    record(2, "unitary equivalence", &mut ac2);
    record(3, "sparse recovery", &mut ac3);
    record(4, "RIC ordering", &mut ac4);
    record(5, "basis-bound trend", &mut ac5);
    record(6, "rotation sparsity", &mut ac6);
    let first = if run(7) || run(11) { first_runs(root.path()) } else { Vec::new() };
    let fig4 = first.iter().find(|r| r.0 == "fig4_reduced").cloned();
    record(7, "rotation benefit", &mut || match &fig4 {
        Some((_, dir, Ok(()))) => ac7(dir),
        Some((_, _, Err(e))) => outcome(false, format!("fig4_reduced failed: {e}")),
        None => outcome(false, "fig4_reduced config missing".into()),
    });
    record(8, "elliptic oracle", &mut ac8);
    record(9, "KL energy", &mut ac9);
    record(10, "l1 solver oracle", &mut ac10);
    record(11, "determinism", &mut || ac11(root.path(), &first));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
