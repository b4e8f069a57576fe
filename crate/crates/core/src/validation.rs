//! Monte Carlo and combinatorial checks of the estimator's headline
//! properties. Each check returns a [`CriterionResult`] with the measured
//! values and the bound it is held to.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::design::{partition, ObservedData};
use crate::error::{Error, Result};
use crate::factors::estimate_factors;
use crate::fdr::{bh_adjust, FdrMethod};
use crate::inference::Method;
use crate::pipeline::{fit, AdjustOptions};
use crate::simulation::{
    component_rng, generate_scenario, procrustes, rep_seed, run_experiment, ExperimentReport,
    ExperimentSpec, OmegaScenario, SimulationConfig, Stream,
};

pub const SUITES: [&str; 10] = [
    "prop1",
    "lemma1",
    "rho",
    "coverage",
    "fig1",
    "chi2null",
    "koverspec",
    "oracle",
    "combinatorial",
    "all",
];

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub measured: Vec<(String, f64)>,
    pub bound: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}:",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name
        )?;
        for (k, v) in &self.measured {
            write!(f, " {k}={v:.4}")?;
        }
        write!(f, " (bound: {})", self.bound)
    }
}

fn suite_seed(seed: u64, suite: u64) -> u64 {
    component_rng(seed, Stream::Validation, suite).next_u64()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- prop1

pub fn prop1_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        n: 100,
        p: 5000,
        k: 3,
        lambdas: Some(vec![5.0; 3]),
        beta_nonzero_prob: 0.0,
        sigma2_mean: 1.0,
        sigma2_var: 0.0,
        noise_df: None,
        omega_scenario: OmegaScenario::Custom(vec![1.0; 3]),
        orthonormal_latent: true,
        seed,
        ..SimulationConfig::default()
    }
}

/// Naive Ω̂ shrinks the standardized Ω^(OLS) by `λ/(λ+ρ)` per component.
pub fn prop1(seed: u64) -> Result<CriterionResult> {
    let cfg = prop1_config(suite_seed(seed, 1));
    let spec = ExperimentSpec {
        methods: vec![Method::AdjustedBiasCorrected],
        reps: 200,
        nominal_levels: vec![0.1],
        ..ExperimentSpec::default()
    };
    let report = run_experiment(&cfg, &spec)?;
    let target = 5.0 / 6.0;
    let k = cfg.k;
    let mut measured = Vec::new();
    let mut pass = report.failures.is_empty();
    for c in 0..k {
        let num: f64 = report.reps.iter().map(|r| r.omega_naive_aligned[c] * r.omega_ols[c]).sum();
        let den: f64 = report.reps.iter().map(|r| r.omega_ols[c] * r.omega_ols[c]).sum();
        let ratio = num / den;
        pass &= (ratio / target - 1.0).abs() <= 0.05;
        measured.push((format!("ratio{}", c + 1), ratio));
    }
    measured.push(("target".into(), target));
    Ok(CriterionResult {
        id: 1,
        name: "naive shrinkage ratio".into(),
        pass,
        measured,
        bound: "each component within ±5% of 5/6".into(),
    })
}

// ---------------------------------------------------------------- lemma1

pub fn lemma1_config(seed: u64) -> SimulationConfig {
    SimulationConfig {
        n: 100,
        p: 5000,
        k: 3,
        lambdas: Some(vec![20.0, 10.0, 5.0]),
        noise_df: None,
        omega_scenario: OmegaScenario::Custom(vec![0.3; 3]),
        seed,
        ..SimulationConfig::default()
    }
}

/// Pooled standardized loading errors `√m(ℓ̂g − ℓg)/σ̂g`, one vector per factor.
pub fn loading_errors(cfg: &SimulationConfig, reps: usize, per_rep: usize) -> Result<Vec<Vec<f64>>> {
    let k = cfg.k;
    let rows: Vec<Vec<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<f64>>> {
            let c = SimulationConfig {
                seed: rep_seed(cfg.seed, rep),
                ..cfg.clone()
            };
            let (data, truth) = generate_scenario(&c)?;
            let fitted = fit(&data, &AdjustOptions::new(k))?;
            let l_hat = &fitted.factors.l_hat;
            let r = procrustes(l_hat, &truth.standardized.l);
            let aligned = l_hat * r;
            let m = fitted.partition.residual_dim() as f64;
            let mut out = vec![Vec::with_capacity(per_rep); k];
            for g in 0..per_rep.min(data.p()) {
                let s = fitted.factors.sigma2_hat[g].sqrt();
                for (j, col) in out.iter_mut().enumerate() {
                    col.push(m.sqrt() * (aligned[(g, j)] - truth.standardized.l[(g, j)]) / s);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut pooled = vec![Vec::new(); k];
    for rep in rows {
        for (j, v) in rep.into_iter().enumerate() {
            pooled[j].extend(v);
        }
    }
    Ok(pooled)
}

/// Estimated loadings are asymptotically normal around the truth.
pub fn lemma1(seed: u64) -> Result<CriterionResult> {
    let cfg = lemma1_config(suite_seed(seed, 2));
    let pooled = loading_errors(&cfg, 20, 1000)?;
    let normal = Normal::standard();
    let mut measured = Vec::new();
    let mut pass = true;
    for (j, v) in pooled.iter().enumerate() {
        let (mean, sd) = mean_sd(v);
        let ks = ks_distance(v, |x| normal.cdf(x));
        pass &= mean.abs() <= 0.05 && (0.9..=1.1).contains(&sd) && ks <= 0.05;
        measured.push((format!("mean{}", j + 1), mean));
        measured.push((format!("sd{}", j + 1), sd));
        measured.push((format!("ks{}", j + 1), ks));
    }
    measured.push(("draws".into(), pooled[0].len() as f64));
    Ok(CriterionResult {
        id: 2,
        name: "loading normality".into(),
        pass,
        measured,
        bound: "|mean| <= 0.05, sd in [0.9, 1.1], KS <= 0.05 per factor".into(),
    })
}

// ---------------------------------------------------------------- rho

/// The noise level estimate is accurate to `0.1/√n`.
pub fn rho(seed: u64) -> Result<CriterionResult> {
    let cfg = SimulationConfig {
        seed: suite_seed(seed, 3),
        ..SimulationConfig::default()
    };
    let spec = ExperimentSpec {
        methods: vec![Method::AdjustedBiasCorrected],
        reps: 50,
        nominal_levels: vec![0.1],
        ..ExperimentSpec::default()
    };
    let report = run_experiment(&cfg, &spec)?;
    let bound = 0.1 / (cfg.n as f64).sqrt();
    let mut dev: Vec<f64> = report.reps.iter().map(|r| (r.rho_hat - cfg.sigma2_mean).abs()).collect();
    let mut dev_realized: Vec<f64> = report.reps.iter().map(|r| (r.rho_hat - r.rho_true).abs()).collect();
    let med = median(&mut dev);
    Ok(CriterionResult {
        id: 3,
        name: "noise level".into(),
        pass: med <= bound && report.failures.is_empty(),
        measured: vec![
            ("median_abs_dev".into(), med),
            ("median_abs_dev_realized".into(), median(&mut dev_realized)),
        ],
        bound: format!("median |rho_hat - 1| <= {bound}"),
    })
}

// ---------------------------------------------------------------- figure-1 family

/// The comparative experiments behind the coverage, FDP and RMSE criteria.
pub struct Fig1Runs {
    pub omega1: ExperimentReport,
    pub omega2: ExperimentReport,
}

fn fig1_spec(fit_k: Option<usize>) -> ExperimentSpec {
    ExperimentSpec {
        methods: vec![
            Method::AdjustedBiasCorrected,
            Method::AdjustedUncorrected,
            Method::Oracle,
        ],
        reps: 20,
        nominal_levels: vec![0.05, 0.1, 0.2],
        fit_k,
        fdr_method: FdrMethod::Storey,
        ..ExperimentSpec::default()
    }
}

pub fn fig1_runs(seed: u64, fit_k: Option<usize>) -> Result<Fig1Runs> {
    let base = suite_seed(seed, 5);
    let run = |scenario: OmegaScenario| {
        let cfg = SimulationConfig {
            omega_scenario: scenario,
            seed: base,
            ..SimulationConfig::default()
        };
        run_experiment(&cfg, &fig1_spec(fit_k))
    };
    Ok(Fig1Runs {
        omega1: run(OmegaScenario::Omega1)?,
        omega2: run(OmegaScenario::Omega2)?,
    })
}

fn summary(r: &ExperimentReport, m: Method) -> &crate::simulation::MethodSummary {
    r.summary_for(m).expect("method was requested")
}

fn fdp_at(r: &ExperimentReport, m: Method, level: f64) -> f64 {
    summary(r, m).mean_fdp[r.level_index(level).expect("level was requested")]
}

/// 95% intervals of the bias-corrected method cover at the nominal rate.
pub fn coverage(runs: &Fig1Runs) -> CriterionResult {
    let c1 = summary(&runs.omega1, Method::AdjustedBiasCorrected).coverage;
    let c2 = summary(&runs.omega2, Method::AdjustedBiasCorrected).coverage;
    let ok = |c: f64| (0.935..=0.965).contains(&c);
    CriterionResult {
        id: 4,
        name: "interval coverage".into(),
        pass: ok(c1) && ok(c2),
        measured: vec![("omega1".into(), c1), ("omega2".into(), c2)],
        bound: "both in [0.935, 0.965]".into(),
    }
}

fn fdp_bounds(runs: &Fig1Runs, id: u32, name: &str, full: bool) -> CriterionResult {
    let bc1 = fdp_at(&runs.omega1, Method::AdjustedBiasCorrected, 0.1);
    let bc2 = fdp_at(&runs.omega2, Method::AdjustedBiasCorrected, 0.1);
    let mut pass = bc1 <= 0.15 && bc2 <= 0.15;
    let mut measured = vec![("bc_omega1".into(), bc1), ("bc_omega2".into(), bc2)];
    let mut bound = "bias-corrected mean FDP <= 0.15 in both scenarios".to_string();
    if full {
        let or1 = fdp_at(&runs.omega1, Method::Oracle, 0.1);
        let or2 = fdp_at(&runs.omega2, Method::Oracle, 0.1);
        let un1 = fdp_at(&runs.omega1, Method::AdjustedUncorrected, 0.1);
        let un2 = fdp_at(&runs.omega2, Method::AdjustedUncorrected, 0.1);
        pass &= or1 <= 0.15 && or2 <= 0.15 && un2 >= 0.20 && un1 >= (0.10f64).max(1.5 * bc1);
        measured.extend([
            ("oracle_omega1".into(), or1),
            ("oracle_omega2".into(), or2),
            ("uncorrected_omega1".into(), un1),
            ("uncorrected_omega2".into(), un2),
        ]);
        bound = "bc and oracle <= 0.15; uncorrected >= 0.20 (omega2), >= max(0.10, 1.5 bc) (omega1)".into();
    }
    CriterionResult {
        id,
        name: name.into(),
        pass,
        measured,
        bound,
    }
}

/// False discovery proportions at q = 0.1 across methods and scenarios.
pub fn fig1(runs: &Fig1Runs) -> CriterionResult {
    fdp_bounds(runs, 5, "false discovery control", true)
}

/// Criterion 5's bias-corrected bounds when the fit over-specifies K.
pub fn koverspec(seed: u64) -> Result<CriterionResult> {
    let runs = fig1_runs(seed, Some(12))?;
    Ok(fdp_bounds(&runs, 7, "over-specified K = 12", false))
}

/// The bias-corrected estimator is nearly as accurate as the oracle.
pub fn oracle(runs: &Fig1Runs) -> CriterionResult {
    let ratio = |r: &ExperimentReport| {
        summary(r, Method::AdjustedBiasCorrected).rmse / summary(r, Method::Oracle).rmse
    };
    let (r1, r2) = (ratio(&runs.omega1), ratio(&runs.omega2));
    CriterionResult {
        id: 8,
        name: "oracle efficiency".into(),
        pass: r1 <= 1.25 && r2 <= 1.25,
        measured: vec![("rmse_ratio_omega1".into(), r1), ("rmse_ratio_omega2".into(), r2)],
        bound: "RMSE(bc)/RMSE(oracle) <= 1.25 per scenario".into(),
    }
}

// ---------------------------------------------------------------- chi2null

/// Under no confounding the test statistic is χ²_K.
pub fn chi2null(seed: u64) -> Result<CriterionResult> {
    let cfg = SimulationConfig {
        omega_scenario: OmegaScenario::Null,
        seed: suite_seed(seed, 6),
        ..SimulationConfig::default()
    };
    let spec = ExperimentSpec {
        methods: vec![Method::AdjustedBiasCorrected],
        reps: 1000,
        nominal_levels: vec![0.1],
        ..ExperimentSpec::default()
    };
    let report = run_experiment(&cfg, &spec)?;
    let stats: Vec<f64> = report.reps.iter().map(|r| r.confounding_chi2).collect();
    let rejection = report.reps.iter().filter(|r| r.confounding_p < 0.05).count() as f64 / stats.len() as f64;
    let chi2 = ChiSquared::new(cfg.k as f64).expect("k >= 1");
    let ks = ks_distance(&stats, |x| chi2.cdf(x));
    Ok(CriterionResult {
        id: 6,
        name: "confounding test null calibration".into(),
        pass: (0.03..=0.07).contains(&rejection) && ks <= 0.05,
        measured: vec![("rejection_rate".into(), rejection), ("ks".into(), ks)],
        bound: "rejection in [0.03, 0.07], KS to chi2_10 <= 0.05".into(),
    })
}

// ---------------------------------------------------------------- combinatorial

/// Definitional BH q-values: `q_i = min_{k ≥ rank_i} min(1, m·p_(k)/k)`.
pub fn brute_force_bh(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    (0..m)
        .map(|i| {
            // Every feature whose p-value is at least p_i (ties included)
            // defines a candidate threshold; its rank is the count at or below.
            p.iter()
                .filter(|&&t| t >= p[i])
                .map(|&t| {
                    let rank = p.iter().filter(|&&s| s <= t).count();
                    (m as f64 * t / rank as f64).min(1.0)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Rejection set of the step-up rule at level `alpha`, by exhaustive search
/// over the number of rejections. The rule `p_(k) ≤ αk/m` is evaluated as
/// `m·p_(k)/k ≤ α` so that grid p-values sitting exactly on a boundary round
/// the same way as the q-values.
pub fn brute_force_step_up(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = (1..=m).rev().find(|&k| m as f64 * sorted[k - 1] / k as f64 <= alpha);
    match k {
        None => vec![false; m],
        Some(k) => p.iter().map(|&v| v <= sorted[k - 1]).collect(),
    }
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Same factor estimates from the Gram eigendecomposition as from a direct
/// SVD of the residual matrix. Returns the worst absolute discrepancy.
pub fn gram_vs_direct(y2: &DMatrix<f64>, k: usize) -> Result<f64> {
    let est = estimate_factors(y2, k)?;
    let (p, m) = y2.shape();
    let svd = (y2 / (m as f64).sqrt()).svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.as_ref().expect("requested U");
    let mut worst: f64 = 0.0;
    for (j, &col) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[col];
        let mut l: Vec<f64> = u.column(col).iter().map(|v| v * s).collect();
        let imax = (0..p).max_by(|&a, &b| l[a].abs().total_cmp(&l[b].abs())).unwrap();
        if l[imax] < 0.0 {
            l.iter_mut().for_each(|v| *v = -*v);
        }
        for (g, v) in l.iter().enumerate() {
            worst = worst.max((v - est.l_hat[(g, j)]).abs());
        }
        worst = worst.max((s * s * m as f64 / p as f64 - est.lambda_hat[j]).abs());
    }
    Ok(worst)
}

/// BH brute force, Gram-vs-direct factor route, and partition invariants.
pub fn combinatorial(seed: u64) -> Result<CriterionResult> {
    let mut rng = component_rng(suite_seed(seed, 9), Stream::Validation, 0);

    let mut bh_mismatch = 0usize;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        // A coarse grid forces ties.
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random::<bool>() {
                    rng.random_range(0..=20) as f64 / 20.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let q = bh_adjust(&p)?.q_values;
        let q_ref = brute_force_bh(&p);
        let mut ok = q.iter().zip(&q_ref).all(|(a, b)| (a - b).abs() <= 1e-12);
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let rej: Vec<bool> = q.iter().map(|&v| v <= alpha).collect();
            ok &= rej == brute_force_step_up(&p, alpha);
        }
        bh_mismatch += !ok as usize;
    }

    let mut gram_worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.random_range(6..=20);
        let p = rng.random_range(m + 1..=50);
        let k = rng.random_range(1..=3.min(m - 2));
        // Distinct spikes keep the eigenvectors well separated.
        let l = random_matrix(&mut rng, p, k);
        let c = random_matrix(&mut rng, m, k);
        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(k, |j, _| 4.0 / (j + 1) as f64));
        let y2 = &l * scale * c.transpose() + random_matrix(&mut rng, p, m) * 0.3;
        gram_worst = gram_worst.max(gram_vs_direct(&y2, k)?);
    }

    let mut part_worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(4..=15);
        let d = rng.random_range(1..=(n - 2).min(4));
        let p = rng.random_range(n + 1..=n + 10);
        let data = ObservedData::unlabeled(random_matrix(&mut rng, p, n), random_matrix(&mut rng, n, d), None)?;
        let part = partition(&data)?;
        let a = &part.a_basis;
        let ortho = (a.tr_mul(a) - DMatrix::identity(n - d, n - d)).amax();
        let annihilate = data.x.tr_mul(a).amax();
        let recon = (part.reconstruct() - &data.y).amax() / data.y.amax();
        part_worst = part_worst.max(ortho).max(annihilate).max(recon);
    }

    Ok(CriterionResult {
        id: 9,
        name: "combinatorial oracles".into(),
        pass: bh_mismatch == 0 && gram_worst <= 1e-8 && part_worst <= 1e-10,
        measured: vec![
            ("bh_mismatches".into(), bh_mismatch as f64),
            ("gram_vs_direct_max_err".into(), gram_worst),
            ("partition_max_err".into(), part_worst),
        ],
        bound: "0 BH mismatches in 1000 cases, Gram route within 1e-8, partition invariants within 1e-10".into(),
    })
}

// ---------------------------------------------------------------- dispatch

/// Runs a named suite. `all` runs every criterion once, sharing the
/// comparative experiments between the criteria that use them.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CriterionResult>> {
    let fig1_family = |which: &[&str]| -> Result<Vec<CriterionResult>> {
        let runs = fig1_runs(seed, None)?;
        Ok(which
            .iter()
            .map(|w| match *w {
                "coverage" => coverage(&runs),
                "fig1" => fig1(&runs),
                _ => oracle(&runs),
            })
            .collect())
    };
    match name {
        "prop1" => Ok(vec![prop1(seed)?]),
        "lemma1" => Ok(vec![lemma1(seed)?]),
        "rho" => Ok(vec![rho(seed)?]),
        "coverage" | "fig1" | "oracle" => fig1_family(&[name]),
        "chi2null" => Ok(vec![chi2null(seed)?]),
        "koverspec" => Ok(vec![koverspec(seed)?]),
        "combinatorial" => Ok(vec![combinatorial(seed)?]),
        "all" => {
            let mut out = vec![prop1(seed)?, lemma1(seed)?, rho(seed)?];
            let family = fig1_family(&["coverage", "fig1", "oracle"])?;
            out.push(family[0].clone());
            out.push(family[1].clone());
            out.push(chi2null(seed)?);
            out.push(koverspec(seed)?);
            out.push(family[2].clone());
            out.push(combinatorial(seed)?);
            Ok(out)
        }
        other => Err(Error::Config(format!(
            "unknown suite `{other}` (expected one of {})",
            SUITES.join(", ")
        ))),
    }
}
