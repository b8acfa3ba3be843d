//! Numerical laboratory for minimum-norm interpolation under data
//! augmentation: when extra consistent perturbations raise standard error,
//! and how robust self-training removes the tradeoff.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod instances;
pub mod l1lab;
pub mod linalg;
pub mod lp;
pub mod report;
pub mod rst;
pub mod spline;
pub mod tradeoff;
pub mod variance;

pub use error::{LabError, Result};
pub use linalg::{DenseMatrix, ToleranceConfig, Vector};
