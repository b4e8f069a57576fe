//! Benjamini–Hochberg and Storey q-values, discovery sets and realized false
//! discovery proportions.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrMethod {
    Bh,
    Storey,
}

impl FdrMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FdrMethod::Bh => "bh",
            FdrMethod::Storey => "storey",
        }
    }
}

impl fmt::Display for FdrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FdrMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bh" => Ok(FdrMethod::Bh),
            "storey" | "qvalue" => Ok(FdrMethod::Storey),
            other => Err(Error::Config(format!("unknown FDR method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdrResult {
    /// In input order.
    pub q_values: Vec<f64>,
    /// Estimated null proportion; 1 for BH.
    pub pi0_hat: f64,
    pub method: FdrMethod,
}

/// Default tuning parameter of the single-λ null-proportion estimate.
pub const STOREY_LAMBDA: f64 = 0.5;

fn check_pvalues(p_values: &[f64]) -> Result<()> {
    if p_values.is_empty() {
        return Err(Error::Config("no p-values to adjust".into()));
    }
    if let Some(i) = p_values.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(format!(
            "p-value {} at position {i} is outside [0, 1]",
            p_values[i]
        )));
    }
    Ok(())
}

/// Step-up adjusted values scaled by `pi0`, in input order.
fn step_up(p_values: &[f64], pi0: f64) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    // Stable: tied p-values keep input order and end up sharing a q-value.
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let adjusted = pi0 * m as f64 * p_values[idx] / (rank0 + 1) as f64;
        running = running.min(adjusted);
        q[idx] = running.min(1.0);
    }
    q
}

pub fn bh_adjust(p_values: &[f64]) -> Result<FdrResult> {
    check_pvalues(p_values)?;
    Ok(FdrResult {
        q_values: step_up(p_values, 1.0),
        pi0_hat: 1.0,
        method: FdrMethod::Bh,
    })
}

/// `π̂0 = #{p > λ} / (m(1−λ))`, clamped to `[1/m, 1]`.
pub fn storey_pi0(p_values: &[f64], lambda: f64) -> f64 {
    let m = p_values.len() as f64;
    let above = p_values.iter().filter(|&&p| p > lambda).count() as f64;
    (above / (m * (1.0 - lambda))).clamp(1.0 / m, 1.0)
}

pub fn storey_qvalue(p_values: &[f64], lambda: f64) -> Result<FdrResult> {
    check_pvalues(p_values)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!("Storey λ must be in (0, 1), got {lambda}")));
    }
    let pi0 = storey_pi0(p_values, lambda);
    Ok(FdrResult {
        q_values: step_up(p_values, pi0),
        pi0_hat: pi0,
        method: FdrMethod::Storey,
    })
}

pub fn adjust(p_values: &[f64], method: FdrMethod) -> Result<FdrResult> {
    match method {
        FdrMethod::Bh => bh_adjust(p_values),
        FdrMethod::Storey => storey_qvalue(p_values, STOREY_LAMBDA),
    }
}

/// Indices with `q ≤ level`.
pub fn discoveries(q_values: &[f64], level: f64) -> Vec<usize> {
    q_values
        .iter()
        .enumerate()
        .filter(|(_, &q)| q <= level)
        .map(|(i, _)| i)
        .collect()
}

/// `|discoveries \ true_nonzero| / max(|discoveries|, 1)`.
pub fn fdp(discoveries: &[usize], true_nonzero: &HashSet<usize>) -> f64 {
    let false_hits = discoveries
        .iter()
        .filter(|i| !true_nonzero.contains(i))
        .count();
    false_hits as f64 / discoveries.len().max(1) as f64
}
