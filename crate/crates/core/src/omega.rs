//! Association between the latent covariates and the design.
//!
//! Regressing `Y1` on the noisy loadings `L̂` shrinks each column of the
//! estimate towards zero by `λk/(λk+ρ)`. Since `λ̂k ≈ λk + ρ`, multiplying
//! column k by `λ̂k/(λ̂k − ρ̂)` undoes the shrinkage.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::spd_inverse;

/// Floor on `(λ̂ − ρ̂)/λ̂`; caps the correction factor at 20.
pub const DEFAULT_CLAMP_EPS: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct OmegaEstimate {
    /// d×k, regression of `Y1` on `L̂`.
    pub omega_naive: DMatrix<f64>,
    /// Per-factor multiplier `λ̂k / max(λ̂k − ρ̂, ε·λ̂k)`.
    pub shrink_correction: Vec<f64>,
    /// d×k, `omega_naive · diag(shrink_correction)`.
    pub omega_bc: DMatrix<f64>,
    /// Factors where the floor replaced `λ̂k − ρ̂`.
    pub clamped: Vec<bool>,
}

/// `Y1ᵀ L̂ (L̂ᵀL̂)⁻¹`.
pub fn naive_omega(y1: &DMatrix<f64>, l_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if l_hat.ncols() == 0 {
        return Ok(DMatrix::zeros(y1.ncols(), 0));
    }
    let ltl_inv = spd_inverse(&l_hat.tr_mul(l_hat), "L̂ᵀL̂")?;
    Ok(y1.tr_mul(l_hat) * ltl_inv)
}

/// Asymptotic shrinkage of the naive estimate, `λk/(λk+ρ)`.
pub fn theoretical_shrinkage(lambda: &[f64], rho: f64) -> Vec<f64> {
    lambda.iter().map(|l| l / (l + rho)).collect()
}

/// The correction factor for one factor and whether the floor was used.
pub fn correction_factor(lambda_hat: f64, rho_hat: f64, clamp_eps: f64) -> (f64, bool) {
    let gap = lambda_hat - rho_hat;
    let floor = clamp_eps * lambda_hat;
    if gap < floor {
        (lambda_hat / floor, true)
    } else {
        (lambda_hat / gap, false)
    }
}

pub fn bias_corrected_omega(
    omega_naive: &DMatrix<f64>,
    lambda_hat: &[f64],
    rho_hat: f64,
    clamp_eps: f64,
) -> OmegaEstimate {
    debug_assert!(clamp_eps > 0.0 && clamp_eps < 1.0);
    debug_assert_eq!(omega_naive.ncols(), lambda_hat.len());
    let (shrink_correction, clamped): (Vec<f64>, Vec<bool>) = lambda_hat
        .iter()
        .map(|&l| correction_factor(l, rho_hat, clamp_eps))
        .unzip();
    let mut omega_bc = omega_naive.clone();
    for (k, f) in shrink_correction.iter().enumerate() {
        omega_bc.column_mut(k).scale_mut(*f);
    }
    OmegaEstimate {
        omega_naive: omega_naive.clone(),
        shrink_correction,
        omega_bc,
        clamped,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaSummary {
    pub omega_naive: Vec<Vec<f64>>,
    pub omega_bc: Vec<Vec<f64>>,
    pub shrink_correction: Vec<f64>,
    pub clamped: Vec<bool>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl From<&OmegaEstimate> for OmegaSummary {
    fn from(o: &OmegaEstimate) -> Self {
        Self {
            omega_naive: rows(&o.omega_naive),
            omega_bc: rows(&o.omega_bc),
            shrink_correction: o.shrink_correction.clone(),
            clamped: o.clamped.clone(),
        }
    }
}
