//! Truncated eigendecomposition of the residual piece `Y2`.
//!
//! Everything is computed from the (n−d)×(n−d) Gram matrix `Y2ᵀY2/(n−d)`,
//! never the p×p covariance, so the cost is `O(p·n² + n³)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, sym_eigen_desc};

/// Below this many residual degrees of freedom the variance estimates are
/// noisy enough to warrant a warning.
pub const MIN_COMFORTABLE_DOF: usize = 10;

/// Relative eigen-gap below which the k-th and (k+1)-th factors are treated as tied.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// p×k loadings: leading left singular vectors of `Y2/√(n−d)` scaled by
    /// their singular values.
    pub l_hat: DMatrix<f64>,
    /// Informativeness eigenvalues `((n−d)/p)·γ²`, decreasing.
    pub lambda_hat: Vec<f64>,
    /// (n−d)×k latent covariates in the residual space, `Ĉ2ᵀĈ2/(n−d) = I`.
    pub c2_hat: DMatrix<f64>,
    /// Per-feature residual variances.
    pub sigma2_hat: Vec<f64>,
    /// Mean of `sigma2_hat`.
    pub rho_hat: f64,
    pub k: usize,
    /// Eigenvalues `γ²` of `Y2ᵀY2/(n−d)`, all of them, decreasing.
    pub gram_eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FactorEstimate {
    /// The "no latent factors" estimate: empty loadings and plain residual
    /// variances `‖y2_g‖²/(n−d)`.
    pub fn none(y2: &DMatrix<f64>) -> Self {
        let (p, m) = y2.shape();
        let sigma2_hat: Vec<f64> = (0..p)
            .map(|g| y2.row(g).norm_squared() / m as f64)
            .collect();
        let rho_hat = pairwise_sum(&sigma2_hat) / p as f64;
        Self {
            l_hat: DMatrix::zeros(p, 0),
            lambda_hat: Vec::new(),
            c2_hat: DMatrix::zeros(m, 0),
            sigma2_hat,
            rho_hat,
            k: 0,
            gram_eigenvalues: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Residual degrees of freedom of `sigma2_hat`.
    pub fn dof(&self) -> usize {
        self.c2_hat.nrows() - self.k
    }
}

/// Estimates `k` latent factors from the p×(n−d) residual matrix.
pub fn estimate_factors(y2: &DMatrix<f64>, k: usize) -> Result<FactorEstimate> {
    let (p, m) = y2.shape();
    if k == 0 || k >= m {
        return Err(Error::InvalidK {
            k,
            max: m.saturating_sub(1),
        });
    }
    let mut warnings = Vec::new();
    if m - k < MIN_COMFORTABLE_DOF {
        warnings.push(format!(
            "only {} residual degrees of freedom after removing {k} factors; variance estimates will be noisy",
            m - k
        ));
    }

    let gram = y2.tr_mul(y2) / m as f64;
    let (mut gamma2, vectors) = sym_eigen_desc(&gram);
    for g in gamma2.iter_mut() {
        *g = g.max(0.0);
    }
    if gamma2[0] <= 0.0 {
        return Err(Error::DegenerateResponse);
    }
    if gamma2[k - 1] <= 1e-14 * gamma2[0] {
        return Err(Error::Singular(format!(
            "residual matrix has numerical rank below k = {k}"
        )));
    }
    if k < m && gamma2[k - 1] - gamma2[k] < TIE_TOL * gamma2[k - 1] {
        warnings.push(format!(
            "eigenvalues {k} and {} are tied; factors within the tied block are determined only up to rotation",
            k + 1
        ));
    }

    let mut v = vectors.columns(0, k).into_owned();
    let scale = (m as f64).sqrt();
    let mut l_hat = (y2 * &v) / scale;
    for j in 0..k {
        let col = l_hat.column(j);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            l_hat.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    let c2_hat = &v * scale;
    let resid = y2 - (y2 * &v) * v.transpose();
    let dof = (m - k) as f64;
    let sigma2_hat: Vec<f64> = (0..p)
        .map(|g| resid.row(g).norm_squared() / dof)
        .collect();
    let rho_hat = pairwise_sum(&sigma2_hat) / p as f64;
    let lambda_hat = gamma2[..k].iter().map(|g| g * m as f64 / p as f64).collect();

    Ok(FactorEstimate {
        l_hat,
        lambda_hat,
        c2_hat,
        sigma2_hat,
        rho_hat,
        k,
        gram_eigenvalues: gamma2,
        warnings,
    })
}

/// `λ̂k − ρ̂`: the empirical eigenvalues with the noise floor removed.
/// Non-positive values are passed through.
pub fn spike_debias(lambda_hat: &[f64], rho_hat: f64) -> Vec<f64> {
    lambda_hat.iter().map(|l| l - rho_hat).collect()
}

/// Compact summary used in reports.
#[derive(Debug, Clone, Serialize)]
pub struct FactorSummary {
    pub k: usize,
    pub lambda_hat: Vec<f64>,
    pub rho_hat: f64,
    pub warnings: Vec<String>,
}

impl From<&FactorEstimate> for FactorSummary {
    fn from(f: &FactorEstimate) -> Self {
        Self {
            k: f.k,
            lambda_hat: f.lambda_hat.clone(),
            rho_hat: f.rho_hat,
            warnings: f.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_rank_one() {
        let l = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let c2 = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let y2 = &l * c2.transpose();
        let f = estimate_factors(&y2, 1).unwrap();
        assert_relative_eq!(f.gram_eigenvalues[0], 9.0, epsilon = 1e-12);
        assert_relative_eq!(f.l_hat, l, epsilon = 1e-12);
        assert_relative_eq!(f.lambda_hat[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(f.c2_hat.abs(), c2.abs(), epsilon = 1e-12);
        for s in &f.sigma2_hat {
            assert!(s.abs() < 1e-24);
        }
        assert!(f.rho_hat.abs() < 1e-24);
        // Only one residual degree of freedom.
        assert_eq!(f.warnings.len(), 1);
    }

    #[test]
    fn zero_residuals_are_an_error() {
        let y2 = DMatrix::zeros(5, 3);
        assert!(matches!(estimate_factors(&y2, 1), Err(Error::DegenerateResponse)));
    }

    #[test]
    fn k_out_of_range() {
        let y2 = DMatrix::from_element(6, 4, 1.0);
        assert!(matches!(estimate_factors(&y2, 0), Err(Error::InvalidK { .. })));
        assert!(matches!(estimate_factors(&y2, 4), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn debias_arithmetic() {
        assert_eq!(spike_debias(&[6.0, 3.0], 1.0), vec![5.0, 2.0]);
        assert_eq!(spike_debias(&[6.0, 3.0], 0.0), vec![6.0, 3.0]);
    }

    #[test]
    fn c2_matches_regression_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y2 = DMatrix::from_fn(40, 12, |_, _| StandardNormal.sample(&mut rng));
        let f = estimate_factors(&y2, 3).unwrap();
        let ltl = f.l_hat.tr_mul(&f.l_hat);
        let via_formula = y2.tr_mul(&f.l_hat) * ltl.try_inverse().unwrap();
        assert_relative_eq!(via_formula, f.c2_hat, epsilon = 1e-9);
        let rho: f64 = f.sigma2_hat.iter().sum::<f64>() / 40.0;
        assert_relative_eq!(rho, f.rho_hat, epsilon = 1e-12);
    }
}
