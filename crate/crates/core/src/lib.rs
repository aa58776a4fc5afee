//! Group-loss auditing for binary predictors.
//!
//! The central quantity is the maximum weighted loss discrepancy (MWLD) of a
//! loss vector: the largest weighted gap between a group's mean loss and the
//! population mean loss, taken over every group of samples. Around it this
//! crate provides
//!
//! * plug-in estimation by a sorted prefix/suffix scan, with an exhaustive
//!   oracle for validation ([`estimator`]),
//! * loss-variance measures that sandwich the square-root-weighted MWLD, plus
//!   finite-sample deviation radii for them ([`variance`]),
//! * logistic models and SGD training under loss-variance and coarse
//!   loss-variance penalties ([`trainer`]),
//! * CSV ingestion with schema-driven sensitive-key construction and
//!   synthetic data generators ([`data`]),
//! * report assembly and serialization for audit runs ([`audit`]).
//!
//! Shared vocabulary types live in [`loss`] and are re-exported at the crate
//! root.

pub mod audit;
pub mod data;
mod error;
pub mod estimator;
pub mod loss;
pub mod model;
mod numeric;
pub mod trainer;
pub mod variance;

pub use error::{Error, Result};
pub use estimator::{ArgmaxSide, ConvergenceBound, MwldResult};
pub use loss::{GroupMask, LabelVector, LossVector, SensitiveKeyVector, WeightRule, Weighting};
pub use model::LinearModel;
pub use numeric::derive_seed;
pub use trainer::{Objective, TrainConfig, TrainHistory};
