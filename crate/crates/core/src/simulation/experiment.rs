use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::align::procrustes_align;
use super::generate::{generate_scenario, SimulationTruth};
use super::rng::rep_seed;
use super::SimulationConfig;
use crate::design::ObservedData;
use crate::error::{Error, Result};
use crate::fdr::{adjust, discoveries, fdp, FdrMethod};
use crate::inference::{oracle_fit, EffectTable, Method};
use crate::io::{write_matrix, LabeledMatrix};
use crate::omega::DEFAULT_CLAMP_EPS;
use crate::pipeline::{fit, AdjustOptions, AdjustmentFit};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Replicates may fail individually; more than this fraction aborts the run.
const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub nominal_levels: Vec<f64>,
    /// Number of factors the estimator is told to fit; defaults to the truth.
    pub fit_k: Option<usize>,
    pub fdr_method: FdrMethod,
    pub clamp_eps: f64,
    pub ci_level: f64,
    /// Also write each replicate's y/x/z matrices when writing to a directory.
    pub write_data: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            methods: vec![
                Method::AdjustedBiasCorrected,
                Method::AdjustedUncorrected,
                Method::Oracle,
            ],
            reps: 20,
            nominal_levels: vec![0.05, 0.1, 0.2],
            fit_k: None,
            fdr_method: FdrMethod::Storey,
            clamp_eps: DEFAULT_CLAMP_EPS,
            ci_level: 0.95,
            write_data: false,
        }
    }
}

/// One method's performance on one replicate. Covariate 0 is evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRepResult {
    pub method: Method,
    pub pi0_hat: f64,
    /// Per nominal level.
    pub discoveries: Vec<usize>,
    pub fdp: Vec<f64>,
    pub covered_null: usize,
    pub n_null: usize,
    pub covered_nonnull: usize,
    pub n_nonnull: usize,
    /// Sum of squared estimation errors over all features.
    pub sse: f64,
    /// Sum and sum of squares of t-statistics over null features.
    pub null_t_sum: f64,
    pub null_t_sum_sq: f64,
}

impl MethodRepResult {
    pub fn coverage(&self) -> f64 {
        (self.covered_null + self.covered_nonnull) as f64 / (self.n_null + self.n_nonnull) as f64
    }

    pub fn rmse(&self) -> f64 {
        (self.sse / (self.n_null + self.n_nonnull) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    /// `(1/p) Σ σg²`.
    pub rho_true: f64,
    pub rho_hat: f64,
    /// Realized standardized eigenvalues.
    pub lambda_true: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub shrink_correction: Vec<f64>,
    pub clamped: Vec<bool>,
    /// Standardized Ω^(OLS), first covariate.
    pub omega_ols: Vec<f64>,
    /// Estimates rotated onto the truth's factor basis, first covariate.
    pub omega_naive_aligned: Vec<f64>,
    pub omega_bc_aligned: Vec<f64>,
    /// Frobenius errors after alignment.
    pub omega_err_naive: f64,
    pub omega_err_bc: f64,
    pub confounding_chi2: f64,
    pub confounding_p: f64,
    pub warnings: Vec<String>,
    pub methods: Vec<MethodRepResult>,
}

impl RepResult {
    pub fn method(&self, m: Method) -> Option<&MethodRepResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_fdp: Vec<f64>,
    pub sd_fdp: Vec<f64>,
    pub mean_discoveries: Vec<f64>,
    /// Pooled over replicates.
    pub coverage: f64,
    pub coverage_null: f64,
    pub coverage_nonnull: f64,
    pub rmse: f64,
    pub null_t_sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: SimulationConfig,
    pub spec: ExperimentSpec,
    pub fit_k: usize,
    pub reps: Vec<RepResult>,
    pub failures: Vec<RepFailure>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn summary_for(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    /// Index of a nominal level in `spec.nominal_levels`.
    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.spec
            .nominal_levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize(methods: &[Method], reps: &[RepResult], levels: usize) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let rows: Vec<&MethodRepResult> = reps.iter().filter_map(|r| r.method(method)).collect();
            let per_level = |f: &dyn Fn(&MethodRepResult, usize) -> f64| -> Vec<(f64, f64)> {
                (0..levels)
                    .map(|l| mean_sd(&rows.iter().map(|r| f(r, l)).collect::<Vec<_>>()))
                    .collect()
            };
            let fdp_stats = per_level(&|r, l| r.fdp[l]);
            let disc_stats = per_level(&|r, l| r.discoveries[l] as f64);
            let sum = |f: &dyn Fn(&MethodRepResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>();
            let n_null = sum(&|r| r.n_null as f64);
            let n_nonnull = sum(&|r| r.n_nonnull as f64);
            let cov_null = sum(&|r| r.covered_null as f64);
            let cov_nonnull = sum(&|r| r.covered_nonnull as f64);
            let t_sum = sum(&|r| r.null_t_sum);
            let t_sq = sum(&|r| r.null_t_sum_sq);
            let t_mean = t_sum / n_null;
            MethodSummary {
                method,
                mean_fdp: fdp_stats.iter().map(|s| s.0).collect(),
                sd_fdp: fdp_stats.iter().map(|s| s.1).collect(),
                mean_discoveries: disc_stats.iter().map(|s| s.0).collect(),
                coverage: (cov_null + cov_nonnull) / (n_null + n_nonnull),
                coverage_null: cov_null / n_null,
                coverage_nonnull: if n_nonnull > 0.0 { cov_nonnull / n_nonnull } else { f64::NAN },
                rmse: (sum(&|r| r.sse) / (n_null + n_nonnull)).sqrt(),
                null_t_sd: ((t_sq - n_null * t_mean * t_mean) / (n_null - 1.0)).sqrt(),
            }
        })
        .collect()
}

struct Evaluated {
    result: MethodRepResult,
    q_values: Vec<f64>,
}

fn evaluate_table(
    table: &EffectTable,
    truth: &SimulationTruth,
    nonzero: &HashSet<usize>,
    spec: &ExperimentSpec,
) -> Result<Evaluated> {
    let p = table.beta_hat.nrows();
    let pvals: Vec<f64> = (0..p).map(|g| table.p_value[(g, 0)]).collect();
    let fdr = adjust(&pvals, spec.fdr_method)?;
    let mut disc = Vec::with_capacity(spec.nominal_levels.len());
    let mut fdps = Vec::with_capacity(spec.nominal_levels.len());
    for &level in &spec.nominal_levels {
        let hits = discoveries(&fdr.q_values, level);
        fdps.push(fdp(&hits, nonzero));
        disc.push(hits.len());
    }
    let crit = StudentsT::new(0.0, 1.0, table.dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.5 + spec.ci_level / 2.0);
    let mut r = MethodRepResult {
        method: table.method,
        pi0_hat: fdr.pi0_hat,
        discoveries: disc,
        fdp: fdps,
        covered_null: 0,
        n_null: 0,
        covered_nonnull: 0,
        n_nonnull: 0,
        sse: 0.0,
        null_t_sum: 0.0,
        null_t_sum_sq: 0.0,
    };
    for g in 0..p {
        let truth_b = truth.b_true[(g, 0)];
        let err = table.beta_hat[(g, 0)] - truth_b;
        let covered = err.abs() <= crit * table.se[(g, 0)];
        r.sse += err * err;
        if truth_b == 0.0 {
            r.n_null += 1;
            r.covered_null += covered as usize;
            let t = table.t_stat[(g, 0)];
            if t.is_finite() {
                r.null_t_sum += t;
                r.null_t_sum_sq += t * t;
            }
        } else {
            r.n_nonnull += 1;
            r.covered_nonnull += covered as usize;
        }
    }
    Ok(Evaluated {
        result: r,
        q_values: fdr.q_values,
    })
}

fn first_row(m: &DMatrix<f64>) -> Vec<f64> {
    m.row(0).iter().copied().collect()
}

struct RepOutput {
    result: RepResult,
    tsv: Option<String>,
    data: Option<ObservedData>,
}

fn run_rep(
    cfg: &SimulationConfig,
    spec: &ExperimentSpec,
    fit_k: usize,
    rep: usize,
    want_tsv: bool,
) -> Result<RepOutput> {
    let seed = rep_seed(cfg.seed, rep);
    let rep_cfg = SimulationConfig { seed, ..cfg.clone() };
    let (data, truth) = generate_scenario(&rep_cfg)?;
    let opts = AdjustOptions {
        k: fit_k,
        clamp_eps: spec.clamp_eps,
        extra_methods: spec
            .methods
            .iter()
            .copied()
            .filter(|m| *m != Method::Oracle)
            .collect(),
    };
    let fitted: AdjustmentFit = fit(&data, &opts)?;
    let mut tables: Vec<EffectTable> = spec
        .methods
        .iter()
        .filter_map(|m| fitted.table(*m).cloned())
        .collect();
    if spec.methods.contains(&Method::Oracle) {
        tables.push(oracle_fit(&data, &truth.c_bar)?.table);
    }
    // Keep the caller's method order.
    tables.sort_by_key(|t| spec.methods.iter().position(|m| *m == t.method));

    let nonzero: HashSet<usize> = truth.nonzero(0).into_iter().collect();
    let evaluated = tables
        .iter()
        .map(|t| evaluate_table(t, &truth, &nonzero, spec))
        .collect::<Result<Vec<_>>>()?;

    let std = &truth.standardized;
    let (_, naive_al) = procrustes_align(&fitted.factors.l_hat, &std.l, &fitted.omega.omega_naive);
    let (_, bc_al) = procrustes_align(&fitted.factors.l_hat, &std.l, &fitted.omega.omega_bc);

    let tsv = want_tsv.then(|| rep_tsv(&data, &truth, &tables, &evaluated));

    let result = RepResult {
        rep,
        seed,
        rho_true: truth.rho(),
        rho_hat: fitted.factors.rho_hat,
        lambda_true: std.lambda.clone(),
        lambda_hat: fitted.factors.lambda_hat.clone(),
        shrink_correction: fitted.omega.shrink_correction.clone(),
        clamped: fitted.omega.clamped.clone(),
        omega_ols: first_row(&std.omega_ols),
        omega_naive_aligned: first_row(&naive_al),
        omega_bc_aligned: first_row(&bc_al),
        omega_err_naive: (&naive_al - &std.omega_ols).norm(),
        omega_err_bc: (&bc_al - &std.omega_ols).norm(),
        confounding_chi2: fitted.confounding.per_covariate_chi2[0],
        confounding_p: fitted.confounding.p_values[0],
        warnings: fitted.factors.warnings.clone(),
        methods: evaluated.into_iter().map(|e| e.result).collect(),
    };
    Ok(RepOutput {
        result,
        tsv,
        data: spec.write_data.then_some(data),
    })
}

fn rep_tsv(data: &ObservedData, truth: &SimulationTruth, tables: &[EffectTable], evaluated: &[Evaluated]) -> String {
    let mut out = String::from("feature_id\tbeta_true");
    for t in tables {
        for col in ["beta", "se", "t", "p", "q"] {
            write!(out, "\t{}.{col}", t.method).unwrap();
        }
    }
    out.push('\n');
    for g in 0..data.p() {
        write!(out, "{}\t{}", data.feature_ids[g], truth.b_true[(g, 0)]).unwrap();
        for (t, e) in tables.iter().zip(evaluated) {
            write!(
                out,
                "\t{}\t{}\t{}\t{}\t{}",
                t.beta_hat[(g, 0)],
                t.se[(g, 0)],
                t.t_stat[(g, 0)],
                t.p_value[(g, 0)],
                e.q_values[g]
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}

/// Runs `spec.reps` replicates of the scenario and aggregates them.
/// Deterministic given `cfg.seed`, independent of thread count.
pub fn run_experiment(cfg: &SimulationConfig, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment_impl(cfg, spec, None)
}

/// As [`run_experiment`], additionally writing `report.json`, one
/// `rep_NNN.tsv` per replicate and, with `spec.write_data`, the replicate's
/// input matrices under `rep_NNN/`.
pub fn run_experiment_to_dir(
    cfg: &SimulationConfig,
    spec: &ExperimentSpec,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    fs::create_dir_all(out_dir)?;
    let report = run_experiment_impl(cfg, spec, Some(out_dir))?;
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn run_experiment_impl(
    cfg: &SimulationConfig,
    spec: &ExperimentSpec,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if spec.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if spec.methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let fit_k = spec.fit_k.unwrap_or(cfg.k);

    let outcomes: Vec<Result<RepResult>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let out = run_rep(cfg, spec, fit_k, rep, out_dir.is_some())?;
            if let Some(dir) = out_dir {
                if let Some(tsv) = &out.tsv {
                    fs::write(dir.join(format!("rep_{rep:03}.tsv")), tsv)?;
                }
                if let Some(data) = &out.data {
                    write_rep_data(&dir.join(format!("rep_{rep:03}")), data)?;
                }
            }
            Ok(out.result)
        })
        .collect();

    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => reps.push(r),
            Err(e) => failures.push(RepFailure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * spec.reps as f64 {
        return Err(Error::Experiment {
            count: failures.len(),
            total: spec.reps,
            first_rep: failures[0].rep,
            first_error: failures[0].error.clone(),
        });
    }
    let summary = summarize(&spec.methods, &reps, spec.nominal_levels.len());
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        spec: spec.clone(),
        fit_k,
        reps,
        failures,
        summary,
    })
}

fn write_rep_data(dir: &Path, data: &ObservedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(
        &dir.join("y.tsv"),
        &LabeledMatrix {
            corner: "feature_id".into(),
            row_ids: data.feature_ids.clone(),
            col_ids: data.sample_ids.clone(),
            values: data.y.clone(),
        },
    )?;
    write_matrix(
        &dir.join("x.tsv"),
        &LabeledMatrix {
            corner: "sample_id".into(),
            row_ids: data.sample_ids.clone(),
            col_ids: data.covariate_ids.clone(),
            values: data.x.clone(),
        },
    )?;
    if let Some(z) = &data.z {
        write_matrix(
            &dir.join("z.tsv"),
            &LabeledMatrix {
                corner: "sample_id".into(),
                row_ids: data.sample_ids.clone(),
                col_ids: (0..z.ncols())
                    .map(|j| if j == 0 { "intercept".into() } else { format!("z{j}") })
                    .collect(),
                values: z.clone(),
            },
        )?;
    }
    Ok(())
}
