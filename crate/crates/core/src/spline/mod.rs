//! Cubic-spline staircase: B-spline features, the curvature penalty, and
//! the experiments where augmentation hurts a minimum-curvature fit.

pub mod basis;
pub mod interval;
pub mod staircase;

pub use basis::{penalty_matrix, SplineBasis};
pub use interval::{
    delta_schedule, estimate_interval, interval_ratio_experiment, IntervalConfig, IntervalEstimate, IntervalProblem,
};
pub use staircase::{
    fig2_trial, local_global_analysis, population_covariance, rst_spline, sample_augmentations, sample_size_sweep,
    sample_staircase, spline_fit, verify_rst_spline, Fig2Trial, LocalGlobalProjection, SplinePopulation, SplineRst,
    StairPoint, StaircaseConfig, StaircaseProblem, StaircaseSample,
};
