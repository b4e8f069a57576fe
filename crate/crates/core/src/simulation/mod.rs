//! Synthetic data with known latent structure and the comparative experiment
//! built on it.

mod align;
mod experiment;
mod generate;
mod rng;

pub use align::{procrustes, procrustes_align};
pub use experiment::{
    run_experiment, run_experiment_to_dir, ExperimentReport, ExperimentSpec, MethodRepResult,
    MethodSummary, RepResult, REPORT_SCHEMA_VERSION,
};
pub use generate::{
    calibrate_omega_norm, generate_scenario, lambda_ladder, omega_bar, standardize_truth,
    t_quantile, SimulationTruth, StandardizedTruth,
};
pub use rng::{component_rng, rep_seed, Stream};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaScenario {
    /// Confounding loads uniformly on the first (most informative) half of the factors.
    Omega1,
    /// Confounding loads uniformly on the last (least informative) half.
    Omega2,
    /// No confounding.
    Null,
    /// Explicit first row of `Ω̄` (length K).
    Custom(Vec<f64>),
}

impl fmt::Display for OmegaScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaScenario::Omega1 => f.write_str("omega1"),
            OmegaScenario::Omega2 => f.write_str("omega2"),
            OmegaScenario::Null => f.write_str("null"),
            OmegaScenario::Custom(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for OmegaScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "omega1" => Ok(OmegaScenario::Omega1),
            "omega2" => Ok(OmegaScenario::Omega2),
            "null" => Ok(OmegaScenario::Null),
            _ => {
                let body = s.strip_prefix("custom:").ok_or_else(|| {
                    Error::Config(format!(
                        "unknown omega scenario `{s}` (expected omega1, omega2, null or custom:v1,v2,...)"
                    ))
                })?;
                let values = body
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad omega value `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(OmegaScenario::Custom(values))
            }
        }
    }
}

/// Parameters of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub d: usize,
    /// `λ1 = n · lambda_max_frac`.
    pub lambda_max_frac: f64,
    /// `λK`.
    pub lambda_min: f64,
    /// Replaces the geometric ladder when set.
    pub lambdas: Option<Vec<f64>>,
    pub beta_nonzero_prob: f64,
    pub beta_sd: f64,
    pub loading_sd: f64,
    pub sigma2_mean: f64,
    pub sigma2_var: f64,
    /// Degrees of freedom of the t noise; `None` means Gaussian.
    pub noise_df: Option<f64>,
    pub mediated_frac: f64,
    pub omega_scenario: OmegaScenario,
    /// Whiten the residual-space part of the latent covariates so that
    /// `C̄2ᵀC̄2/(n−d) = I` exactly and the standardized eigenvalues equal
    /// the generating ones up to loading noise.
    pub orthonormal_latent: bool,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 20_000,
            k: 10,
            d: 1,
            lambda_max_frac: 0.2,
            lambda_min: 1.0,
            lambdas: None,
            beta_nonzero_prob: 0.05,
            beta_sd: 0.4,
            loading_sd: 0.5,
            sigma2_mean: 1.0,
            sigma2_var: 0.25,
            noise_df: Some(4.0),
            mediated_frac: 0.2,
            omega_scenario: OmegaScenario::Omega1,
            orthonormal_latent: false,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// Dimension of the residual space after removing the intercept and `X`.
    pub fn residual_dim(&self) -> usize {
        self.n.saturating_sub(1 + self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n < 4 || self.residual_dim() <= self.k {
            return bad(format!(
                "n = {} leaves too few residual dimensions for k = {}",
                self.n, self.k
            ));
        }
        if self.p <= self.n {
            return bad(format!("p = {} must exceed n = {}", self.p, self.n));
        }
        for (name, v) in [
            ("beta_nonzero_prob", self.beta_nonzero_prob),
            ("mediated_frac", self.mediated_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.mediated_frac >= 1.0 {
            return bad("mediated_frac must be below 1".into());
        }
        if !(self.beta_sd >= 0.0 && self.loading_sd > 0.0 && self.sigma2_mean > 0.0 && self.sigma2_var >= 0.0)
        {
            return bad("scale parameters must be positive".into());
        }
        if let Some(df) = self.noise_df {
            if !(df > 2.0) {
                return bad(format!("noise_df must exceed 2 for finite variance, got {df}"));
            }
        }
        if !(self.lambda_max_frac > 0.0 && self.lambda_min > 0.0) {
            return bad("eigenvalue ladder must be positive".into());
        }
        if let Some(l) = &self.lambdas {
            if l.len() != self.k || l.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("lambdas must hold {} positive values", self.k));
            }
        }
        match &self.omega_scenario {
            OmegaScenario::Omega1 | OmegaScenario::Omega2 if !self.k.is_multiple_of(2) => {
                bad(format!("scenario {} needs an even k, got {}", self.omega_scenario, self.k))
            }
            OmegaScenario::Custom(v) if v.len() != self.k => {
                bad(format!("custom omega has {} entries, expected k = {}", v.len(), self.k))
            }
            _ => Ok(()),
        }
    }
}
