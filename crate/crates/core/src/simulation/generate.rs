use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::rng::{Stream, StreamFactory};
use super::{OmegaScenario, SimulationConfig};
use crate::design::{orthonormal_complement, ObservedData};
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, sym_eigen_desc, sym_inv_sqrt, sym_sqrt};

/// Everything the generator knows about one dataset.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    /// p×d direct effects.
    pub b_true: DMatrix<f64>,
    /// p×K raw loadings.
    pub l_bar: DMatrix<f64>,
    /// n×K raw latent covariates, original sample space.
    pub c_bar: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// d×K population regression of `C̄` on `X`.
    pub omega_bar: DMatrix<f64>,
    /// Generating eigenvalue ladder.
    pub lambda: Vec<f64>,
    pub standardized: StandardizedTruth,
}

impl SimulationTruth {
    /// Features with a nonzero effect on covariate `j`.
    pub fn nonzero(&self, j: usize) -> Vec<usize> {
        (0..self.b_true.nrows())
            .filter(|&g| self.b_true[(g, j)] != 0.0)
            .collect()
    }

    /// `(1/p) Tr Σ`.
    pub fn rho(&self) -> f64 {
        crate::linalg::pairwise_sum(&self.sigma2) / self.sigma2.len() as f64
    }
}

/// Latent structure in the identifiable parameterization: `C2ᵀC2/(n−d) = I`
/// and `LᵀL` diagonal and decreasing.
#[derive(Debug, Clone)]
pub struct StandardizedTruth {
    pub l: DMatrix<f64>,
    /// Same sample space as the `c_bar` passed in (original space in
    /// [`SimulationTruth`]).
    pub c: DMatrix<f64>,
    /// d×K.
    pub omega_ols: DMatrix<f64>,
    /// `C̄ᵀP⊥C̄/(n−d)`.
    pub psi_hat: DMatrix<f64>,
    /// `C = C̄·transform`, `L = L̄·transform⁻ᵀ`.
    pub transform: DMatrix<f64>,
    /// Realized `((n−d)/p)·diag(LᵀL)`.
    pub lambda: Vec<f64>,
}

/// Quantile function of the standard t distribution.
pub fn t_quantile(u: f64, df: f64) -> f64 {
    if df == 4.0 {
        let alpha = 4.0 * u * (1.0 - u);
        let q = ((alpha.sqrt()).acos() / 3.0).cos() / alpha.sqrt();
        (u - 0.5).signum() * 2.0 * (q - 1.0).max(0.0).sqrt()
    } else {
        StudentsT::new(0.0, 1.0, df)
            .expect("df > 0")
            .inverse_cdf(u)
    }
}

/// Uniform on the open interval (0, 1).
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// `λk = λ1^{(K−k)/(K−1)} · λK^{(k−1)/(K−1)}` with `λ1 = n·lambda_max_frac`.
pub fn lambda_ladder(cfg: &SimulationConfig) -> Vec<f64> {
    if let Some(l) = &cfg.lambdas {
        return l.clone();
    }
    let hi = cfg.n as f64 * cfg.lambda_max_frac;
    let lo = cfg.lambda_min;
    let k = cfg.k;
    if k == 1 {
        return vec![hi];
    }
    (1..=k)
        .map(|i| {
            let w = (k - i) as f64 / (k - 1) as f64;
            hi.powf(w) * lo.powf(1.0 - w)
        })
        .collect()
}

/// Squared norm of `Ω̄` such that the mediated path `XΩ̄ℓ̄g` explains
/// `mediated_frac` of the covariate-driven variance of a non-null feature
/// when `Ω̄` loads uniformly on the last half of the factors, i.e.
/// `ω²·Σ_weak E(ℓ̄gk²) = f/(1−f)·β_sd²` with `E(ℓ̄gk²) = λk/(n−2)` and
/// `‖Ω̄‖² = (K/2)·ω²`.
pub fn calibrate_omega_norm(lambda: &[f64], n: usize, mediated_frac: f64, beta_sd: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mediated_frac) {
        return Err(Error::Config(format!(
            "mediated_frac must be in [0, 1), got {mediated_frac}"
        )));
    }
    let k = lambda.len();
    let weak = &lambda[k / 2..];
    let s: f64 = weak.iter().sum::<f64>() / (n as f64 - 2.0);
    if !(s > 0.0) {
        return Err(Error::Config("eigenvalue sum of the weak half is zero".into()));
    }
    let omega2 = mediated_frac / (1.0 - mediated_frac) * beta_sd * beta_sd / s;
    Ok(weak.len() as f64 * omega2)
}

/// d×K `Ω̄` for the configured scenario; only the first covariate is confounded.
pub fn omega_bar(cfg: &SimulationConfig, lambda: &[f64]) -> Result<DMatrix<f64>> {
    let k = cfg.k;
    let mut omega = DMatrix::zeros(cfg.d, k);
    let row: Vec<f64> = match &cfg.omega_scenario {
        OmegaScenario::Null => vec![0.0; k],
        OmegaScenario::Custom(v) => v.clone(),
        scenario => {
            let norm2 = calibrate_omega_norm(lambda, cfg.n, cfg.mediated_frac, cfg.beta_sd)?;
            let w = (norm2 / (k / 2) as f64).sqrt();
            let first_half = matches!(scenario, OmegaScenario::Omega1);
            (0..k)
                .map(|i| if (i < k / 2) == first_half { w } else { 0.0 })
                .collect()
        }
    };
    for (i, v) in row.into_iter().enumerate() {
        omega[(0, i)] = v;
    }
    Ok(omega)
}

/// Rescales and rotates `(L̄, C̄)` into the identifiable parameterization.
/// `c_bar` and `x` must already be free of nuisance covariates.
pub fn standardize_truth(
    l_bar: &DMatrix<f64>,
    c_bar: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<StandardizedTruth> {
    let (n, d) = x.shape();
    let m = (n - d) as f64;
    let p = l_bar.nrows() as f64;
    let a = orthonormal_complement(x)?;
    let c2 = a.tr_mul(c_bar);
    let psi = c2.tr_mul(&c2) / m;
    let psi_sqrt = sym_sqrt(&psi, "Ψ̂")?;
    let psi_isqrt = sym_inv_sqrt(&psi, "Ψ̂")?;

    let scaled = l_bar * &psi_sqrt;
    let (eig, u) = sym_eigen_desc(&scaled.tr_mul(&scaled));
    let mut transform = &psi_isqrt * &u;
    let mut l = scaled * &u;
    for j in 0..l.ncols() {
        let col = l.column(j);
        if col[col.iamax()] < 0.0 {
            l.column_mut(j).neg_mut();
            transform.column_mut(j).neg_mut();
        }
    }
    let c = c_bar * &transform;
    let xtx_inv = spd_inverse(&x.tr_mul(x), "XᵀX")?;
    let omega_ols = xtx_inv * x.tr_mul(c_bar) * &transform;
    Ok(StandardizedTruth {
        l,
        c,
        omega_ols,
        psi_hat: psi,
        transform,
        lambda: eig.iter().map(|e| e * m / p).collect(),
    })
}

struct FeatureDraw {
    beta: Vec<f64>,
    loading: Vec<f64>,
    sigma2: f64,
    noise: Vec<f64>,
}

/// Draws one dataset; returns the observed data (with an intercept as the
/// only nuisance covariate) and the full truth.
pub fn generate_scenario(cfg: &SimulationConfig) -> Result<(ObservedData, SimulationTruth)> {
    cfg.validate()?;
    let (n, p, k, d) = (cfg.n, cfg.p, cfg.k, cfg.d);
    let lambda = lambda_ladder(cfg);
    let m = cfg.residual_dim() as f64;
    let loading_var = cfg.loading_sd * cfg.loading_sd;
    let inclusion: Vec<f64> = lambda.iter().map(|l| l / (m * loading_var)).collect();
    if let Some(i) = inclusion.iter().position(|&q| q > 1.0) {
        return Err(Error::Config(format!(
            "λ{} = {} cannot be reached with loading sd {} (needs inclusion probability {:.3} > 1)",
            i + 1,
            lambda[i],
            cfg.loading_sd,
            inclusion[i]
        )));
    }
    let omega = omega_bar(cfg, &lambda)?;
    let streams = StreamFactory::new(cfg.seed);

    let mut x = DMatrix::from_fn(n, d, |i, j| {
        if j == 0 {
            if i < n / 2 { 0.0 } else { 1.0 }
        } else {
            0.0
        }
    });
    for j in 1..d {
        let mut rng = streams.rng(Stream::Design, j as u64);
        for i in 0..n {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let z = DMatrix::from_element(n, 1, 1.0);

    let mut xi = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut rng = streams.rng(Stream::Latent, i as u64);
        for j in 0..k {
            xi[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    if cfg.orthonormal_latent {
        let mut w = DMatrix::zeros(n, d + 1);
        w.column_mut(0).fill(1.0);
        w.columns_mut(1, d).copy_from(&x);
        let a = orthonormal_complement(&w)?;
        let xi2 = a.tr_mul(&xi);
        let whitened = &xi2 * sym_inv_sqrt(&(xi2.tr_mul(&xi2) / m), "latent residual covariance")?;
        xi += &a * (whitened - xi2);
    }
    let c_bar = &x * &omega + xi;

    let gamma = if cfg.sigma2_var > 0.0 {
        let shape = cfg.sigma2_mean * cfg.sigma2_mean / cfg.sigma2_var;
        Some(Gamma::new(shape, cfg.sigma2_var / cfg.sigma2_mean).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let noise_scale = cfg.noise_df.map_or(1.0, |df| ((df - 2.0) / df).sqrt());

    let draws: Vec<FeatureDraw> = (0..p)
        .into_par_iter()
        .map(|g| {
            let g64 = g as u64;
            let mut rng = streams.rng(Stream::Beta, g64);
            let beta = (0..d)
                .map(|_| {
                    let hit = rng.random::<f64>() < cfg.beta_nonzero_prob;
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if hit { cfg.beta_sd * v } else { 0.0 }
                })
                .collect();
            let mut rng = streams.rng(Stream::Loading, g64);
            let loading = inclusion
                .iter()
                .map(|&q| {
                    let hit = rng.random::<f64>() < q;
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if hit { cfg.loading_sd * v } else { 0.0 }
                })
                .collect();
            let sigma2 = match &gamma {
                Some(gm) => gm.sample(&mut streams.rng(Stream::Sigma, g64)),
                None => cfg.sigma2_mean,
            };
            let sd = sigma2.sqrt() * noise_scale;
            let mut rng = streams.rng(Stream::Noise, g64);
            let noise = (0..n)
                .map(|_| match cfg.noise_df {
                    Some(df) => sd * t_quantile(open_uniform(&mut rng), df),
                    None => {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        sd * v
                    }
                })
                .collect();
            FeatureDraw {
                beta,
                loading,
                sigma2,
                noise,
            }
        })
        .collect();

    let b_true = DMatrix::from_fn(p, d, |g, j| draws[g].beta[j]);
    let l_bar = DMatrix::from_fn(p, k, |g, j| draws[g].loading[j]);
    let sigma2: Vec<f64> = draws.iter().map(|f| f.sigma2).collect();
    let noise = DMatrix::from_fn(p, n, |g, i| draws[g].noise[i]);
    drop(draws);

    let y = &b_true * x.transpose() + &l_bar * c_bar.transpose() + noise;

    let q = orthonormal_complement(&z)?;
    let mut standardized = standardize_truth(&l_bar, &q.tr_mul(&c_bar), &q.tr_mul(&x))?;
    standardized.c = &c_bar * &standardized.transform;

    let feature_ids = (0..p).map(|g| format!("g{g}")).collect();
    let sample_ids = (0..n).map(|i| format!("s{i}")).collect();
    let covariate_ids = (0..d)
        .map(|j| if j == 0 { "group".to_string() } else { format!("x{j}") })
        .collect();
    let data = ObservedData::new(y, x, Some(z), feature_ids, sample_ids, covariate_ids)?;
    let truth = SimulationTruth {
        b_true,
        l_bar,
        c_bar,
        sigma2,
        omega_bar: omega,
        lambda,
        standardized,
    };
    Ok((data, truth))
}
