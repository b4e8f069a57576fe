//! Command implementations behind the `latent-adjust` binary. Each command is
//! a composition of library calls; the binary only parses flags and reports
//! errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use latent_adjust::fdr::{adjust as fdr_adjust, discoveries, FdrMethod};
use latent_adjust::factors::FactorSummary;
use latent_adjust::io::{read_matrix, LabeledMatrix, Orientation};
use latent_adjust::omega::{OmegaSummary, DEFAULT_CLAMP_EPS};
use latent_adjust::simulation::{run_experiment_to_dir, ExperimentReport, ExperimentSpec, SimulationConfig};
use latent_adjust::validation::{run_suite, CriterionResult};
use latent_adjust::{fit, AdjustOptions, AdjustmentFit, Error, Method, ObservedData, Result};
use serde_json::{json, Value};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct AdjustConfig {
    pub y: PathBuf,
    pub x: PathBuf,
    pub z: Option<PathBuf>,
    pub k: usize,
    pub fdr_method: FdrMethod,
    pub clamp_eps: f64,
    /// Comparators reported after the bias-corrected method.
    pub methods: Vec<Method>,
    pub nominal_levels: Vec<f64>,
    /// `y` is stored samples × features.
    pub transpose: bool,
}

impl AdjustConfig {
    pub fn new(y: PathBuf, x: PathBuf, k: usize) -> Self {
        Self {
            y,
            x,
            z: None,
            k,
            fdr_method: FdrMethod::Storey,
            clamp_eps: DEFAULT_CLAMP_EPS,
            methods: Vec::new(),
            nominal_levels: vec![0.05, 0.1],
            transpose: false,
        }
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn parse_levels(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad level `{s}`")))?;
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(Error::Config(format!("level {v} must be in (0, 1)")))
            }
        })
        .collect()
}

/// Reads the input files and aligns the design rows to the response's
/// sample order.
pub fn load_data(cfg: &AdjustConfig) -> Result<ObservedData> {
    let mut y = read_matrix(&cfg.y, Orientation::FeaturesBySamples)?;
    if cfg.transpose {
        y = y.transpose();
    }
    let align = |m: LabeledMatrix, what: &str| -> Result<LabeledMatrix> {
        m.reorder_rows(&y.col_ids).map_err(|e| {
            Error::Dimension(format!("{what} samples do not match the response samples: {e}"))
        })
    };
    let x = align(read_matrix(&cfg.x, Orientation::SamplesByCovariates)?, "design")?;
    let z = match &cfg.z {
        Some(path) => Some(align(read_matrix(path, Orientation::SamplesByCovariates)?, "nuisance")?),
        None => None,
    };
    ObservedData::new(
        y.values,
        x.values,
        z.map(|z| z.values),
        y.row_ids,
        y.col_ids,
        x.col_ids,
    )
}

pub struct AdjustOutput {
    pub fit: AdjustmentFit,
    pub table_tsv: String,
    pub summary: Value,
}

/// Fits the estimator and renders the results table and summary.
///
/// Table columns, in order: `feature_id`, then for every method (bias
/// corrected first) and every covariate the five columns
/// `beta_hat, se, t, p, q`. Bias-corrected columns are named
/// `<stat>.<covariate>`; comparators are prefixed with `<method>.`.
pub fn adjust_data(data: &ObservedData, cfg: &AdjustConfig) -> Result<AdjustOutput> {
    if cfg.k == 0 {
        return Err(Error::InvalidK { k: 0, max: data.n().saturating_sub(data.d() + data.r() + 1) });
    }
    let opts = AdjustOptions {
        k: cfg.k,
        clamp_eps: cfg.clamp_eps,
        extra_methods: cfg.methods.clone(),
    };
    let fitted = fit(data, &opts)?;
    let (p, d) = (data.p(), data.d());

    let mut header = String::from("feature_id");
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut method_summaries = Vec::new();
    for table in &fitted.tables {
        let prefix = match table.method {
            Method::AdjustedBiasCorrected => String::new(),
            m => format!("{m}."),
        };
        let mut per_cov = Vec::new();
        for j in 0..d {
            let cov = &data.covariate_ids[j];
            let pvals: Vec<f64> = table.p_value.column(j).iter().copied().collect();
            let fdr = fdr_adjust(&pvals, cfg.fdr_method)?;
            for stat in ["beta_hat", "se", "t", "p", "q"] {
                write!(header, "\t{prefix}{stat}.{cov}").unwrap();
            }
            columns.push(table.beta_hat.column(j).iter().copied().collect());
            columns.push(table.se.column(j).iter().copied().collect());
            columns.push(table.t_stat.column(j).iter().copied().collect());
            columns.push(pvals);
            let counts: BTreeMap<String, usize> = cfg
                .nominal_levels
                .iter()
                .map(|&l| (l.to_string(), discoveries(&fdr.q_values, l).len()))
                .collect();
            per_cov.push(json!({
                "covariate": cov,
                "pi0_hat": fdr.pi0_hat,
                "discoveries": counts,
            }));
            columns.push(fdr.q_values);
        }
        method_summaries.push(json!({
            "method": table.method,
            "dof": table.dof,
            "degenerate_features": table.degenerate.iter().filter(|&&b| b).count(),
            "covariates": per_cov,
        }));
    }
    header.push('\n');
    let mut tsv = header;
    for g in 0..p {
        tsv.push_str(&data.feature_ids[g]);
        for col in &columns {
            write!(tsv, "\t{}", col[g]).unwrap();
        }
        tsv.push('\n');
    }

    let conf = &fitted.confounding;
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "confounding_test": {
            "covariates": data.covariate_ids,
            "chi2": conf.per_covariate_chi2,
            "dof": conf.dof,
            "p_values": conf.p_values,
            "statistic": conf.statistic,
        },
        "clamped": fitted.omega.clamped,
        "k": cfg.k,
        "n": data.n(),
        "p": p,
        "d": d,
        "nuisance_columns": data.r(),
        "fdr_method": cfg.fdr_method,
        "clamp_eps": cfg.clamp_eps,
        "factors": FactorSummary::from(&fitted.factors),
        "omega": OmegaSummary::from(&fitted.omega),
        "methods": method_summaries,
    });
    Ok(AdjustOutput {
        fit: fitted,
        table_tsv: tsv,
        summary,
    })
}

/// `adjust`: read, fit, and write the table and summary.
pub fn adjust_command(cfg: &AdjustConfig, out: &Path, summary: &Path) -> Result<AdjustOutput> {
    let data = load_data(cfg)?;
    let output = adjust_data(&data, cfg)?;
    fs::write(out, &output.table_tsv)?;
    fs::write(summary, serde_json::to_string_pretty(&output.summary)?)?;
    Ok(output)
}

/// Flat `key = value` configuration; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

/// Builds the simulation and experiment settings from a key/value map.
/// Unknown keys are errors.
pub fn simulation_from_map(map: &BTreeMap<String, String>) -> Result<(SimulationConfig, ExperimentSpec)> {
    let mut cfg = SimulationConfig::default();
    let mut spec = ExperimentSpec::default();
    for (key, v) in map {
        let k = key.as_str();
        match k {
            "n" => cfg.n = parse_value(k, v)?,
            "p" => cfg.p = parse_value(k, v)?,
            "k" => cfg.k = parse_value(k, v)?,
            "d" => cfg.d = parse_value(k, v)?,
            "lambda_max_frac" => cfg.lambda_max_frac = parse_value(k, v)?,
            "lambda_min" => cfg.lambda_min = parse_value(k, v)?,
            "lambdas" => cfg.lambdas = Some(parse_list(k, v)?),
            "beta_nonzero_prob" => cfg.beta_nonzero_prob = parse_value(k, v)?,
            "beta_sd" => cfg.beta_sd = parse_value(k, v)?,
            "loading_sd" => cfg.loading_sd = parse_value(k, v)?,
            "sigma2_mean" => cfg.sigma2_mean = parse_value(k, v)?,
            "sigma2_var" => cfg.sigma2_var = parse_value(k, v)?,
            "noise_df" => {
                cfg.noise_df = match v.as_str() {
                    "normal" | "gaussian" | "none" | "inf" => None,
                    _ => Some(parse_value(k, v)?),
                }
            }
            "mediated_frac" => cfg.mediated_frac = parse_value(k, v)?,
            "omega_scenario" => cfg.omega_scenario = v.parse()?,
            "orthonormal_latent" => cfg.orthonormal_latent = parse_value(k, v)?,
            "seed" => cfg.seed = parse_value(k, v)?,
            "reps" => spec.reps = parse_value(k, v)?,
            "fit_k" => spec.fit_k = Some(parse_value(k, v)?),
            "methods" => spec.methods = parse_methods(v)?,
            "nominal_levels" => spec.nominal_levels = parse_levels(v)?,
            "fdr_method" => spec.fdr_method = v.parse()?,
            "clamp_eps" => spec.clamp_eps = parse_value(k, v)?,
            "ci_level" => spec.ci_level = parse_value(k, v)?,
            "write_data" => spec.write_data = parse_value(k, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
    }
    cfg.validate()?;
    Ok((cfg, spec))
}

/// `simulate`: command-line `reps`/`seed` override the file.
pub fn simulate_command(
    config: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    let mut map = parse_key_values(&fs::read_to_string(config)?)?;
    if let Some(r) = reps {
        map.insert("reps".into(), r.to_string());
    }
    if let Some(s) = seed {
        map.insert("seed".into(), s.to_string());
    }
    let (cfg, spec) = simulation_from_map(&map)?;
    run_experiment_to_dir(&cfg, &spec, out_dir)
}

/// `validate`: runs the named suite.
pub fn validate_command(suite: &str, seed: u64) -> Result<Vec<CriterionResult>> {
    run_suite(suite, seed)
}

/// Machine-readable error object.
pub fn error_json(kind: &str, message: &str) -> Value {
    json!({ "error": { "kind": kind, "message": message } })
}
