//! Per-feature effect estimates, standard errors and p-values.
//!
//! Every adjusted method computes `β̂g = y1g − Ω ℓ̂g` for some estimate `Ω` of
//! the latent-on-design regression, with variance
//! `σ̂g²·([(XᵀX)⁻¹]jj + [ΩΩᵀ]jj/n)` and a `t_{n−d−K}` reference.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::design::{nuisance_rotation, partition, remove_nuisance, rotate, ObservedData, Partition};
use crate::error::{Error, Result};
use crate::factors::FactorEstimate;
use crate::linalg::{spd_inverse, sym_eigen_desc, sym_sqrt};
use crate::omega::OmegaEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unadjusted,
    AdjustedUncorrected,
    AdjustedBiasCorrected,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::AdjustedBiasCorrected,
        Method::AdjustedUncorrected,
        Method::Unadjusted,
        Method::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Unadjusted => "unadjusted",
            Method::AdjustedUncorrected => "adjusted_uncorrected",
            Method::AdjustedBiasCorrected => "adjusted_bias_corrected",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unadjusted" | "ols" => Ok(Method::Unadjusted),
            "adjusted_uncorrected" | "uncorrected" | "naive" => Ok(Method::AdjustedUncorrected),
            "adjusted_bias_corrected" | "bias_corrected" | "bc" => Ok(Method::AdjustedBiasCorrected),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Effect estimates for one method; all matrices are p×d.
#[derive(Debug, Clone)]
pub struct EffectTable {
    pub method: Method,
    pub beta_hat: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub t_stat: DMatrix<f64>,
    pub p_value: DMatrix<f64>,
    pub dof: usize,
    /// Features whose residual variance is exactly zero.
    pub degenerate: Vec<bool>,
}

/// Two-sided p-value of `t` against a central t distribution.
pub fn two_sided_t_pvalue(t: f64, dof: usize) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Assembles the table given `β̂`, `σ̂²` and the per-covariate variance
/// multipliers (so `Var(β̂g[j]) = σ̂g²·multiplier[j]`).
fn build_table(
    method: Method,
    beta_hat: DMatrix<f64>,
    sigma2: &[f64],
    multiplier: &[f64],
    dof: usize,
) -> EffectTable {
    let (p, d) = beta_hat.shape();
    let mut se = DMatrix::zeros(p, d);
    let mut t_stat = DMatrix::zeros(p, d);
    let mut p_value = DMatrix::zeros(p, d);
    let mut degenerate = vec![false; p];
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1");
    for g in 0..p {
        if sigma2[g] <= 0.0 {
            degenerate[g] = true;
        }
        for j in 0..d {
            let b = beta_hat[(g, j)];
            let s = (sigma2[g].max(0.0) * multiplier[j]).sqrt();
            se[(g, j)] = s;
            if s > 0.0 {
                let t = b / s;
                t_stat[(g, j)] = t;
                p_value[(g, j)] = (2.0 * dist.cdf(-t.abs())).min(1.0);
            } else if b != 0.0 {
                t_stat[(g, j)] = b.signum() * f64::INFINITY;
                p_value[(g, j)] = 0.0;
            } else {
                t_stat[(g, j)] = 0.0;
                p_value[(g, j)] = 1.0;
            }
        }
    }
    EffectTable {
        method,
        beta_hat,
        se,
        t_stat,
        p_value,
        dof,
        degenerate,
    }
}

/// Shared path of the adjusted methods: plug `omega` (d×k) into the
/// regression of `Y1` on the estimated loadings.
pub fn effects_with_omega(
    method: Method,
    part: &Partition,
    fac: &FactorEstimate,
    omega: &DMatrix<f64>,
) -> Result<EffectTable> {
    let p = part.p();
    if fac.l_hat.nrows() != p || omega.shape() != (part.d, fac.k) {
        return Err(Error::Dimension(format!(
            "loadings {}×{} and Ω {}×{} do not fit p = {p}, d = {}",
            fac.l_hat.nrows(),
            fac.l_hat.ncols(),
            omega.nrows(),
            omega.ncols(),
            part.d
        )));
    }
    let beta = &part.y1 - &fac.l_hat * omega.transpose();
    let oot = omega * omega.transpose();
    let n = part.n_eff as f64;
    let multiplier: Vec<f64> = (0..part.d)
        .map(|j| part.xtx_inv[(j, j)] + oot[(j, j)] / n)
        .collect();
    Ok(build_table(method, beta, &fac.sigma2_hat, &multiplier, fac.dof()))
}

pub fn effects_bias_corrected(
    part: &Partition,
    fac: &FactorEstimate,
    om: &OmegaEstimate,
) -> Result<EffectTable> {
    effects_with_omega(Method::AdjustedBiasCorrected, part, fac, &om.omega_bc)
}

pub fn effects_adjusted_uncorrected(
    part: &Partition,
    fac: &FactorEstimate,
    om: &OmegaEstimate,
) -> Result<EffectTable> {
    effects_with_omega(Method::AdjustedUncorrected, part, fac, &om.omega_naive)
}

/// Ordinary least squares ignoring latent structure, from an existing partition.
pub fn unadjusted_from_partition(part: &Partition) -> EffectTable {
    let m = part.residual_dim();
    let sigma2: Vec<f64> = (0..part.p())
        .map(|g| part.y2.row(g).norm_squared() / m as f64)
        .collect();
    let multiplier: Vec<f64> = (0..part.d).map(|j| part.xtx_inv[(j, j)]).collect();
    build_table(Method::Unadjusted, part.y1.clone(), &sigma2, &multiplier, m)
}

/// `Y X (XᵀX)⁻¹` with residual variance on `n − d` degrees of freedom.
pub fn effects_unadjusted(data: &ObservedData) -> Result<EffectTable> {
    let part = partition(&remove_nuisance(data)?)?;
    Ok(unadjusted_from_partition(&part))
}

/// Result of the known-latent-covariate fit.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub table: EffectTable,
    /// `(XᵀX)⁻¹XᵀC` in the standardized scale, d×k.
    pub omega_ols: DMatrix<f64>,
}

/// OLS treating the latent covariates `c_true` (n×k, in the original sample
/// space) as observed.
pub fn effects_oracle(data: &ObservedData, c_true: &DMatrix<f64>) -> Result<EffectTable> {
    oracle_fit(data, c_true).map(|f| f.table)
}

pub fn oracle_fit(data: &ObservedData, c_true: &DMatrix<f64>) -> Result<OracleFit> {
    if c_true.nrows() != data.n() {
        return Err(Error::Dimension(format!(
            "latent covariates have {} rows, data has {} samples",
            c_true.nrows(),
            data.n()
        )));
    }
    let (rotated, c) = match nuisance_rotation(data)? {
        None => (data.clone(), c_true.clone()),
        Some(q) => (rotate(data, &q), q.tr_mul(c_true)),
    };
    let part = partition(&rotated)?;
    let k = c.ncols();
    let m = part.residual_dim();
    if k == 0 {
        return Ok(OracleFit {
            table: with_method(unadjusted_from_partition(&part), Method::Oracle),
            omega_ols: DMatrix::zeros(part.d, 0),
        });
    }
    if k >= m {
        return Err(Error::InvalidK { k, max: m - 1 });
    }
    let c2 = part.a_basis.tr_mul(&c);
    let c2tc2 = c2.tr_mul(&c2);
    let (eig, _) = sym_eigen_desc(&c2tc2);
    if !(eig[k - 1] > 1e-12 * c.norm_squared().max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(
            "latent covariates are collinear with the design".into(),
        ));
    }
    let c2tc2_inv = spd_inverse(&c2tc2, "C2ᵀC2")?;
    let l_ols = &part.y2 * &c2 * &c2tc2_inv;
    let omega_raw = &part.xtx_inv * part.x.tr_mul(&c);
    let beta = &part.y1 - &l_ols * omega_raw.transpose();

    let resid = &part.y2 - &l_ols * c2.transpose();
    let dof = m - k;
    let sigma2: Vec<f64> = (0..part.p())
        .map(|g| resid.row(g).norm_squared() / dof as f64)
        .collect();

    // Ψ̂⁻¹ = (n−d)(C2ᵀC2)⁻¹; the standardized Ω has ΩΩᵀ = Ω_raw Ψ̂⁻¹ Ω_rawᵀ.
    let psi_inv = &c2tc2_inv * m as f64;
    let oot = &omega_raw * &psi_inv * omega_raw.transpose();
    let n = part.n_eff as f64;
    let multiplier: Vec<f64> = (0..part.d)
        .map(|j| part.xtx_inv[(j, j)] + oot[(j, j)] / n)
        .collect();
    let psi = &c2tc2 / m as f64;
    let psi_inv_sqrt = crate::linalg::sym_inv_sqrt(&psi, "Ψ̂")?;
    Ok(OracleFit {
        table: build_table(Method::Oracle, beta, &sigma2, &multiplier, dof),
        omega_ols: omega_raw * psi_inv_sqrt,
    })
}

fn with_method(mut t: EffectTable, method: Method) -> EffectTable {
    t.method = method;
    t
}

/// Joint test that the latent covariates are unrelated to the design.
#[derive(Debug, Clone, Serialize)]
pub struct ConfoundingTest {
    /// `(XᵀX)^{1/2} Ω̂ Ω̂ᵀ (XᵀX)^{1/2}`, d×d, row-major.
    pub statistic: Vec<Vec<f64>>,
    /// Diagonal of `statistic`; each is χ²_K under the null.
    pub per_covariate_chi2: Vec<f64>,
    pub dof: usize,
    pub p_values: Vec<f64>,
}

pub fn confounding_test(om: &OmegaEstimate, xtx: &DMatrix<f64>) -> Result<ConfoundingTest> {
    confounding_test_for(&om.omega_bc, xtx)
}

/// As [`confounding_test`] for an arbitrary d×k coefficient matrix.
pub fn confounding_test_for(omega: &DMatrix<f64>, xtx: &DMatrix<f64>) -> Result<ConfoundingTest> {
    let d = xtx.nrows();
    if omega.nrows() != d {
        return Err(Error::Dimension(format!(
            "Ω has {} rows but XᵀX is {d}×{d}",
            omega.nrows()
        )));
    }
    let root = sym_sqrt(xtx, "XᵀX")?;
    let scaled = &root * omega;
    let w = &scaled * scaled.transpose();
    let k = omega.ncols();
    let per_covariate_chi2: Vec<f64> = (0..d).map(|j| w[(j, j)].max(0.0)).collect();
    let p_values = if k == 0 {
        vec![1.0; d]
    } else {
        let chi2 = ChiSquared::new(k as f64).expect("k >= 1");
        per_covariate_chi2.iter().map(|&s| chi2.sf(s)).collect()
    };
    Ok(ConfoundingTest {
        statistic: crate::omega::rows(&w),
        per_covariate_chi2,
        dof: k,
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omega::bias_corrected_omega;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn group(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| if i < n / 2 { 0.0 } else { 1.0 })
    }

    #[test]
    fn confounding_test_known_value() {
        let om = bias_corrected_omega(&DMatrix::from_element(1, 1, 0.5), &[4.0], 0.0, 0.05);
        let t = confounding_test(&om, &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(t.per_covariate_chi2[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.p_values[0], 0.317_310_507_862_914_1, epsilon = 1e-9);
    }

    #[test]
    fn confounding_test_zero_omega() {
        let om = bias_corrected_omega(&DMatrix::zeros(2, 3), &[4.0, 3.0, 2.0], 1.0, 0.05);
        let xtx = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 3.0]);
        let t = confounding_test(&om, &xtx).unwrap();
        assert_eq!(t.per_covariate_chi2, vec![0.0, 0.0]);
        assert_eq!(t.p_values, vec![1.0, 1.0]);
    }

    #[test]
    fn unadjusted_recovers_planted_effects() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let x = normal(&mut rng, n, 2);
        let b = normal(&mut rng, 15, 2);
        let data = ObservedData::unlabeled(&b * x.transpose(), x, None).unwrap();
        let t = effects_unadjusted(&data).unwrap();
        assert_relative_eq!(t.beta_hat, b, epsilon = 1e-10);
        assert_eq!(t.dof, n - 2);
    }

    #[test]
    fn unadjusted_bias_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 12;
        let x = normal(&mut rng, n, 1);
        let b = normal(&mut rng, 20, 1);
        let l = normal(&mut rng, 20, 3);
        let omega = normal(&mut rng, 1, 3);
        let c = &x * &omega;
        let y = &b * x.transpose() + &l * c.transpose();
        let data = ObservedData::unlabeled(y, x, None).unwrap();
        let t = effects_unadjusted(&data).unwrap();
        assert_relative_eq!(t.beta_hat, b + &l * omega.transpose(), epsilon = 1e-10);
    }

    #[test]
    fn zero_variance_features_are_flagged() {
        let beta = DMatrix::from_column_slice(3, 1, &[0.5, 0.0, 0.2]);
        let t = build_table(Method::AdjustedBiasCorrected, beta, &[0.0, 0.0, 1.0], &[0.25], 10);
        assert_eq!(t.degenerate, vec![true, true, false]);
        assert_eq!(t.p_value[(0, 0)], 0.0);
        assert_eq!(t.p_value[(1, 0)], 1.0);
        assert_relative_eq!(t.se[(2, 0)], 0.5);
        assert_relative_eq!(t.t_stat[(2, 0)], 0.4);
    }

    #[test]
    fn oracle_exact_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 14;
        let x = group(n);
        let z = DMatrix::from_element(n, 1, 1.0);
        let b = normal(&mut rng, 30, 1);
        let l = normal(&mut rng, 30, 2);
        let c = normal(&mut rng, n, 2) + &x * normal(&mut rng, 1, 2);
        let m = normal(&mut rng, 30, 1);
        let y = &b * x.transpose() + &l * c.transpose() + &m * z.transpose();
        let data = ObservedData::unlabeled(y, x, Some(z)).unwrap();
        let t = effects_oracle(&data, &c).unwrap();
        assert_relative_eq!(t.beta_hat, b, epsilon = 1e-9);
        assert_eq!(t.dof, n - 1 - 1 - 2);
    }

    #[test]
    fn oracle_rejects_latent_in_design_span() {
        let n = 10;
        let x = group(n);
        let c = &x * 2.0;
        let y = DMatrix::from_fn(20, n, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let data = ObservedData::unlabeled(y, x, None).unwrap();
        assert!(matches!(effects_oracle(&data, &c), Err(Error::Singular(_))));
    }

    #[test]
    fn t_pvalue_is_symmetric_and_bounded() {
        assert_relative_eq!(two_sided_t_pvalue(0.0, 5), 1.0);
        assert_relative_eq!(two_sided_t_pvalue(2.0, 7), two_sided_t_pvalue(-2.0, 7));
        assert_eq!(two_sided_t_pvalue(f64::INFINITY, 3), 0.0);
    }
}
