//! End-to-end fit: nuisance rotation, partition, factor estimation, Ω
//! estimation and effect tables.

use crate::design::{partition, remove_nuisance, ObservedData, Partition};
use crate::error::{Error, Result};
use crate::factors::{estimate_factors, FactorEstimate};
use crate::inference::{
    confounding_test, effects_adjusted_uncorrected, effects_bias_corrected,
    unadjusted_from_partition, ConfoundingTest, EffectTable, Method,
};
use crate::omega::{bias_corrected_omega, naive_omega, OmegaEstimate, DEFAULT_CLAMP_EPS};

#[derive(Debug, Clone)]
pub struct AdjustOptions {
    /// Number of latent factors.
    pub k: usize,
    pub clamp_eps: f64,
    /// Comparator methods to report alongside the bias-corrected one.
    /// `Oracle` is not available here since it needs the latent covariates.
    pub extra_methods: Vec<Method>,
}

impl AdjustOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            clamp_eps: DEFAULT_CLAMP_EPS,
            extra_methods: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidK { k: 0, max: usize::MAX });
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 1.0) {
            return Err(Error::Config(format!(
                "clamp_eps must be in (0, 1), got {}",
                self.clamp_eps
            )));
        }
        if self.extra_methods.contains(&Method::Oracle) {
            return Err(Error::Config(
                "the oracle method needs the latent covariates and is only available in simulations".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdjustmentFit {
    pub partition: Partition,
    pub factors: FactorEstimate,
    pub omega: OmegaEstimate,
    pub confounding: ConfoundingTest,
    /// Bias-corrected table first, then the requested comparators in order.
    pub tables: Vec<EffectTable>,
}

impl AdjustmentFit {
    pub fn table(&self, method: Method) -> Option<&EffectTable> {
        self.tables.iter().find(|t| t.method == method)
    }

    pub fn bias_corrected(&self) -> &EffectTable {
        &self.tables[0]
    }
}

/// Runs the whole estimator on observed data.
pub fn fit(data: &ObservedData, opts: &AdjustOptions) -> Result<AdjustmentFit> {
    opts.validate()?;
    let part = partition(&remove_nuisance(data)?)?;
    fit_partition(part, opts)
}

/// Runs the estimator on an existing partition.
pub fn fit_partition(part: Partition, opts: &AdjustOptions) -> Result<AdjustmentFit> {
    opts.validate()?;
    let factors = estimate_factors(&part.y2, opts.k)?;
    let naive = naive_omega(&part.y1, &factors.l_hat)?;
    let omega = bias_corrected_omega(&naive, &factors.lambda_hat, factors.rho_hat, opts.clamp_eps);
    let confounding = confounding_test(&omega, &part.xtx)?;

    let mut tables = vec![effects_bias_corrected(&part, &factors, &omega)?];
    for &method in &opts.extra_methods {
        let table = match method {
            Method::AdjustedBiasCorrected => continue,
            Method::AdjustedUncorrected => effects_adjusted_uncorrected(&part, &factors, &omega)?,
            Method::Unadjusted => unadjusted_from_partition(&part),
            Method::Oracle => unreachable!("rejected by validate"),
        };
        if tables.iter().all(|t| t.method != method) {
            tables.push(table);
        }
    }
    Ok(AdjustmentFit {
        partition: part,
        factors,
        omega,
        confounding,
        tables,
    })
}
