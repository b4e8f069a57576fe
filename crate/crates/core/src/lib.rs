//! Adjusting high-dimensional regressions for unobserved confounders.
//!
//! The response `Y` (features × samples) is split by the design `X` into a
//! projection onto `X` and its orthogonal complement. Latent factors are
//! estimated from the complement, and their association with `X` is debiased
//! before being subtracted from the per-feature effects.

pub mod design;
pub mod error;
pub mod factors;
pub mod fdr;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod omega;
pub mod pipeline;
pub mod simulation;
pub mod validation;

pub use design::{partition, remove_nuisance, ObservedData, Partition};
pub use error::{Error, Result};
pub use factors::{estimate_factors, FactorEstimate};
pub use fdr::FdrMethod;
pub use inference::{EffectTable, Method};
pub use omega::OmegaEstimate;
pub use pipeline::{fit, AdjustOptions, AdjustmentFit};
