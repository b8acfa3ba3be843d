//! Named verification suites and experiments behind the command-line front
//! end. Each returns an [`ExperimentReport`] whose assertions decide the
//! process exit code.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::estimators::RegressionInstance;
use crate::instances::{gaussian_matrix, gaussian_vector, psd_with_spectrum, random_covariance, random_instance, random_orthogonal, rng_for};
use crate::l1lab::{ratio_experiment, L1Config};
use crate::linalg::{pinv, rank, DenseMatrix, ToleranceConfig, Vector};
use crate::report::{median, ExperimentReport, OutputFormat};
use crate::rst::{random_rst_instance, rst_fit, verify_rst_guarantees};
use crate::spline::{
    fig2_trial, interval_ratio_experiment, rst_spline, sample_size_sweep, sample_staircase, spline_fit,
    verify_rst_spline, IntervalConfig, StaircaseConfig, StaircaseProblem,
};
use crate::tradeoff::{
    check_safe_conditions, condition_3d, construct_adversarial_theta, decompose, decompose_instance, increase_3d,
    norm_gap_check, literal_condition_3d, safe_region_scan, single_point_condition,
};
use crate::variance::{kovanic_pinv_sum, monte_carlo_variance, variance_difference, MonteCarloOptions};

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = LabError;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL.iter().copied().find(|v| v.name() == s).ok_or_else(|| LabError::UnknownName(s.to_string()))
            }
        }
    };
}

named_enum!(VerifySuite {
    Theorem1 => "theorem1",
    SafeConditions => "safe-conditions",
    Variance => "variance",
    Kovanic => "kovanic",
    Rst => "rst",
    All => "all",
});

named_enum!(ExperimentKind {
    SplineSampleSize => "spline-sample-size",
    SafeRegion => "safe-region",
    Fig2 => "fig2",
    SplineIntervalRatio => "spline-interval-ratio",
    L1Ratio => "l1-ratio",
    RstSpline => "rst-spline",
});

impl ExperimentKind {
    pub fn description(self) -> &'static str {
        match self {
            Self::SplineSampleSize => "mean L_std(aug) − L_std(std) of spline fits as n grows",
            Self::SafeRegion => "safe and harmful single extra directions on the 3D instance",
            Self::Fig2 => "standard, augmented and RST spline predictions on a dense grid",
            Self::SplineIntervalRatio => "R(aug)/R(std) for interval augmentation as the stair count grows",
            Self::L1Ratio => "error ratio of minimum-ℓ1 fits on the repeated-block construction",
            Self::RstSpline => "RST on the spline staircase: no-tradeoff guarantees per trial",
        }
    }

    /// Default parameters as JSON, for `list`.
    pub fn default_params(self) -> serde_json::Value {
        let value = match self {
            Self::SplineSampleSize => serde_json::to_value(SampleSizeParams::default()),
            Self::SafeRegion => serde_json::to_value(SafeRegionParams::default()),
            Self::Fig2 => serde_json::to_value(Fig2Params::default()),
            Self::SplineIntervalRatio => serde_json::to_value(IntervalConfig::default()),
            Self::L1Ratio => serde_json::to_value(L1Config::default()),
            Self::RstSpline => serde_json::to_value(RstSplineParams::default()),
        };
        value.unwrap_or(serde_json::Value::Null)
    }
}

/// One experiment run as read from a config file. `params` holds the
/// experiment's own section and is validated when the run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<OutputFormat>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: None,
            out_dir: None,
            format: None,
            tolerances: ToleranceConfig::default(),
            params: serde_json::Value::Null,
        }
    }

    fn params<T: DeserializeOwned + Default>(&self) -> Result<T> {
        if self.params.is_null() {
            return Ok(T::default());
        }
        serde_json::from_value(self.params.clone()).map_err(|e| LabError::Config {
            field: "params".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSizeParams {
    pub staircase: StaircaseConfig,
    pub n_list: Vec<usize>,
    pub trials: usize,
}

impl Default for SampleSizeParams {
    fn default() -> Self {
        Self { staircase: StaircaseConfig::default(), n_list: vec![22, 50, 100, 250, 500, 1000], trials: 25 }
    }
}

/// Canonical 3D instance: `X_std = e₃ᵀ`, `Σ = diag(lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafeRegionParams {
    pub theta_star: [f64; 3],
    pub lambda: [f64; 3],
    /// Directions `(cos φ, sin φ, 0)` scanned over `φ ∈ [0, π)`.
    pub angles: usize,
}

impl Default for SafeRegionParams {
    fn default() -> Self {
        Self { theta_star: [1.0, 0.1, 1.0], lambda: [1.0, 10.0, 1.0], angles: 180 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2Params {
    pub staircase: StaircaseConfig,
    pub n: usize,
    /// Training sets drawn from seeds `seed, seed+1, …`.
    pub trials: usize,
    pub grid_points: usize,
}

impl Default for Fig2Params {
    fn default() -> Self {
        Self { staircase: StaircaseConfig::default(), n: 22, trials: 25, grid_points: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RstSplineParams {
    pub staircase: StaircaseConfig,
    pub n: usize,
    pub trials: usize,
}

impl Default for RstSplineParams {
    fn default() -> Self {
        Self { staircase: StaircaseConfig::default(), n: 22, trials: 25 }
    }
}

fn config_error(field: &str, message: &str) -> LabError {
    LabError::Config { field: field.into(), message: message.into() }
}

/// Runs one experiment; `seed` overrides the config's seed.
pub fn run_experiment(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<ExperimentReport> {
    let seed = seed.or(cfg.seed).ok_or_else(|| config_error("seed", "a seed is required"))?;
    let tol = cfg.tolerances;
    tol.validate()?;
    let start = Instant::now();
    let mut report = match cfg.experiment {
        ExperimentKind::SplineSampleSize => spline_sample_size(&cfg.params()?, seed, &tol)?,
        ExperimentKind::SafeRegion => safe_region(&cfg.params()?, seed, &tol)?,
        ExperimentKind::Fig2 => fig2(&cfg.params()?, seed, &tol)?,
        ExperimentKind::SplineIntervalRatio => interval_ratio_experiment(&cfg.params()?, seed, &tol)?,
        ExperimentKind::L1Ratio => ratio_experiment(&cfg.params()?, seed, &tol)?,
        ExperimentKind::RstSpline => rst_spline_experiment(&cfg.params()?, seed, &tol)?,
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn spline_sample_size(params: &SampleSizeParams, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let problem = StaircaseProblem::new(&params.staircase, tol)?;
    let mut report = sample_size_sweep(&problem, &params.n_list, params.trials, seed)?.with_config(params)?;
    let gaps = report.column("mean_gap").unwrap_or_default();
    let (first, last) = (gaps[0], gaps[gaps.len() - 1]);
    report.check("gap_shrinks", last < first, format!("mean gap {first:.3e} at n = {} → {last:.3e} at n = {}", params.n_list[0], params.n_list[params.n_list.len() - 1]));
    let fractions = report.column("full_support_fraction").unwrap_or_default();
    let full_gaps = report.column("max_abs_gap_full_support").unwrap_or_default();
    match (0..fractions.len()).rev().find(|&k| fractions[k] > 0.0) {
        Some(k) => report.check(
            "full_support_gap",
            full_gaps[k] <= 1e-6,
            format!("max |gap| = {:.3e} over full-support trials at n = {}", full_gaps[k], params.n_list[k]),
        ),
        None => report.check("full_support_gap", false, "no trial covered the whole domain"),
    }
    Ok(report)
}

fn safe_region(params: &SafeRegionParams, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    if params.angles == 0 {
        return Err(config_error("angles", "must be at least 1"));
    }
    if params.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(config_error("lambda", "eigenvalues must be positive"));
    }
    let x_std = DenseMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    let sigma = DenseMatrix::from_diagonal(&Vector::from_column_slice(&params.lambda));
    let theta = Vector::from_column_slice(&params.theta_star);
    let angles: Vec<f64> = (0..params.angles).map(|k| std::f64::consts::PI * k as f64 / params.angles as f64).collect();
    let dirs: Vec<Vector> = angles.iter().map(|a| Vector::from_column_slice(&[a.cos(), a.sin(), 0.0])).collect();
    let scan = safe_region_scan(&x_std, &sigma, &theta, &dirs, tol)?;
    let mut report = ExperimentReport::new("safe-region", seed, &["phi", "x1", "x2", "increase", "safe", "criterion"]).with_config(params)?;
    let mut disagreements = 0;
    for (phi, point) in angles.iter().zip(&scan) {
        let criterion = match single_point_condition(&point.direction, &x_std, &sigma, &theta, tol) {
            Ok(v) => v,
            Err(LabError::DegenerateDirection(_)) => 0.0,
            Err(e) => return Err(e),
        };
        let neutral = point.increase.abs() <= 1e-10;
        if !neutral && point.safe != (criterion <= 0.0) {
            disagreements += 1;
        }
        report.push_row(vec![*phi, point.direction[0], point.direction[1], point.increase, f64::from(u8::from(point.safe)), criterion])?;
    }
    let safe = scan.iter().filter(|p| p.safe).count();
    report.set_summary("safe_fraction", safe as f64 / scan.len() as f64)?;
    report.check("criterion_agrees", disagreements == 0, format!("{disagreements} sign disagreements with the single-point criterion"));
    report.check("eigen_directions_safe", scan[0].safe, "e₁ is an eigenvector of Σ, so adding it is safe");
    Ok(report)
}

/// Evaluates a spline on `points` evenly spaced points of its domain.
fn dense_grid(problem: &StaircaseProblem, points: usize) -> Vec<f64> {
    let (lo, hi) = problem.basis.domain();
    let last = points.max(2) - 1;
    (0..=last).map(|k| lo + (hi - lo) * k as f64 / last as f64).collect()
}

fn fig2(params: &Fig2Params, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    if params.trials == 0 {
        return Err(config_error("trials", "must be at least 1"));
    }
    let problem = StaircaseProblem::new(&params.staircase, tol)?;
    let population = problem.population()?;
    let trials = (0..params.trials as u64)
        .into_par_iter()
        .map(|k| fig2_trial(&problem, &population, params.n, &mut rng_for(seed.wrapping_add(k), 0)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new("fig2", seed, &["t", "truth", "standard", "augmented", "rst"]).with_config(params)?;
    let shown = &trials[0];
    for t in dense_grid(&problem, params.grid_points) {
        let eval = |theta: &Vector| problem.basis.evaluate(theta, t);
        report.push_row(vec![t, t.floor().min(problem.s as f64 - 1.0), eval(&shown.std_fit.theta)?, eval(&shown.aug_fit.theta)?, eval(&shown.rst_theta)?])?;
    }
    let med = |f: fn(&crate::spline::Fig2Trial) -> f64| median(&trials.iter().map(f).collect::<Vec<_>>());
    let (m_std, m_aug, m_rst) = (med(|t| t.std_error), med(|t| t.aug_error), med(|t| t.rst_error));
    report.set_summary("median_std_error", m_std)?;
    report.set_summary("median_aug_error", m_aug)?;
    report.set_summary("median_rst_error", m_rst)?;
    report.check("augmentation_hurts", m_aug > m_std, format!("median L_std: aug {m_aug:.4e} vs std {m_std:.4e}"));
    report.check("rst_no_worse", m_rst <= m_std.min(m_aug), format!("median L_std(rst) = {m_rst:.4e}"));
    Ok(report)
}

fn rst_spline_experiment(params: &RstSplineParams, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    if params.trials == 0 {
        return Err(config_error("trials", "must be at least 1"));
    }
    let problem = StaircaseProblem::new(&params.staircase, tol)?;
    let population = problem.population()?;
    let rows = (0..params.trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed.wrapping_add(k), 0);
            let sample = sample_staircase(&problem, params.n, &mut rng)?;
            let rst = rst_spline(&sample.data, &problem, &population)?;
            let g = verify_rst_spline(&rst, &sample.data, &problem, &population)?;
            let std_rank = rank(&problem.rotate(&sample.data).x, tol)?;
            let std_fit = spline_fit(&sample.data, None, &problem)?;
            Ok(vec![
                k as f64,
                rst.solution.iterations as f64,
                (problem.dim() - std_rank) as f64,
                problem.risk(&std_fit.theta)?,
                g.std_error_rst,
                g.rob_error_rst,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new(
        "rst-spline",
        seed,
        &["trial", "iterations", "max_iterations", "std_error_pseudo", "std_error_rst", "rob_error_rst"],
    )
    .with_config(params)?;
    let mut failures = 0;
    for row in rows {
        let ok = row[1] <= row[2] && row[4] <= row[3] + 1e-10 && (row[5] - row[4]).abs() <= 1e-8;
        failures += usize::from(!ok);
        report.push_row(row)?;
    }
    report.check("no_tradeoff", failures == 0, format!("{failures} of {} trials violate a guarantee", params.trials));
    Ok(report)
}

/// Runs a verification suite on seeded random instances.
pub fn run_verify(suite: VerifySuite, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = match suite {
        VerifySuite::Theorem1 => verify_theorem1(seed, tol)?,
        VerifySuite::SafeConditions => verify_safe_conditions(seed, tol)?,
        VerifySuite::Variance => verify_variance(seed, tol)?,
        VerifySuite::Kovanic => verify_kovanic(seed, tol)?,
        VerifySuite::Rst => verify_rst(seed, tol)?,
        VerifySuite::All => {
            let mut all = ExperimentReport::new("verify-all", seed, &["suite", "checks", "failed"]);
            for (idx, &s) in VerifySuite::ALL.iter().filter(|&&s| s != VerifySuite::All).enumerate() {
                let sub = run_verify(s, seed, tol)?;
                let failed = sub.assertions.iter().filter(|a| !a.passed).count();
                all.push_row(vec![idx as f64, sub.assertions.len() as f64, failed as f64])?;
                for a in sub.assertions {
                    all.check(&format!("{}/{}", s.name(), a.name), a.passed, a.detail);
                }
            }
            all
        }
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs `f` on instance indices `0..count` in parallel, keeping order.
fn parallel_instances<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count as u64).into_par_iter().map(f).collect()
}

fn verify_theorem1(seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let rows = parallel_instances(500, |k| {
        let inst = random_instance(&mut rng_for(seed, k), 20);
        let dec = decompose_instance(&inst, tol)?;
        let err = (dec.predicted_diff - dec.direct_diff).abs();
        Ok(vec![k as f64, inst.dim() as f64, dec.predicted_diff, dec.direct_diff, err / (1.0 + dec.direct_diff.abs())])
    })?;
    let mut report = ExperimentReport::new("verify-theorem1", seed, &["instance", "d", "predicted", "direct", "rel_error"]);
    let worst = rows.iter().map(|r| r[4]).fold(0.0, f64::max);
    let failed = rows.iter().filter(|r| r[4] > 1e-8).count();
    for row in rows {
        report.push_row(row)?;
    }
    report.set_summary("max_rel_error", worst)?;
    report.check("identity", failed == 0, format!("{failed} of 500 instances exceed 1e-8 (worst {worst:.2e})"));

    let (built, worst_gap, bound_failures) = adversarial_geometries(seed, 50, tol)?;
    report.set_summary("adversarial_max_increase_error", worst_gap)?;
    report.check(
        "adversarial_construction",
        worst_gap <= 1e-6 && bound_failures == 0,
        format!("{built} geometries: max |increase − 1| = {worst_gap:.2e}, {bound_failures} norm-bound failures"),
    );
    Ok(report)
}

/// Builds the adversarial θ* with `c = 1` on `want` random geometries that
/// admit a `(w, v)` pair. Returns the count, the worst increase error and
/// the number of norm-bound failures.
pub fn adversarial_geometries(seed: u64, want: usize, tol: &ToleranceConfig) -> Result<(usize, f64, usize)> {
    let mut built = 0;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut attempt = 0u64;
    while built < want {
        if attempt > 100 * want as u64 {
            return Err(LabError::NumericFailure("too few geometries admit a (w, v) pair".into()));
        }
        let mut rng = rng_for(seed, 1_000_000 + attempt);
        attempt += 1;
        let d = rng.random_range(3..=10);
        let n = rng.random_range(1..=d - 2);
        let m = rng.random_range(1..=d - n - 1);
        let x_std = gaussian_matrix(&mut rng, n, d);
        let x_ext = gaussian_matrix(&mut rng, m, d);
        let sigma = random_covariance(&mut rng, d, 0.0);
        let c1 = rng.random_range(0.2..2.0);
        match construct_adversarial_theta(&x_std, &x_ext, &sigma, 1.0, c1, tol) {
            Ok(cons) => {
                built += 1;
                worst = worst.max((cons.achieved_increase - 1.0).abs());
                if !norm_gap_check(&cons, &x_std, &sigma, tol)? {
                    failures += 1;
                }
            }
            Err(LabError::ConstructionImpossible(_) | LabError::NoPairExists(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((built, worst, failures))
}

/// Random instance satisfying sufficient condition `which`: 0 for `Σ ∝ I`,
/// 1 for augmented rows spanning the space, 2 for one extra row whose
/// null-space part is an eigenvector of Σ.
pub fn safe_condition_instance<R: Rng>(rng: &mut R, which: usize) -> Result<RegressionInstance> {
    let d = rng.random_range(3..=12);
    let n = rng.random_range(1..d);
    let theta = gaussian_vector(rng, d);
    match which {
        0 => {
            let x_std = gaussian_matrix(rng, n, d);
            let m = rng.random_range(1..=d);
            let x_ext = gaussian_matrix(rng, m, d);
            let gamma = rng.random_range(0.5..2.0);
            RegressionInstance::noiseless(x_std, x_ext, theta, DenseMatrix::identity(d, d) * gamma)
        }
        1 => {
            let x_std = gaussian_matrix(rng, n, d);
            let m = d - n + rng.random_range(0..3);
            let x_ext = gaussian_matrix(rng, m, d);
            RegressionInstance::noiseless(x_std, x_ext, theta, random_covariance(rng, d, 0.0))
        }
        _ => {
            // X_std avoids eigenvector q₀, so q₀ lies in its null space.
            let q = random_orthogonal(rng, d);
            let spectrum: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
            let sigma = psd_with_spectrum(&q, &spectrum);
            let rest = q.columns(1, d - 1).into_owned();
            let x_std = gaussian_matrix(rng, n, d - 1) * rest.transpose();
            let x_ext = DenseMatrix::from_row_slice(1, d, q.column(0).as_slice()) + gaussian_matrix(rng, 1, n) * &x_std;
            RegressionInstance::noiseless(x_std, x_ext, theta, sigma)
        }
    }
}

fn verify_safe_conditions(seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    const NAMES: [&str; 3] = ["identity_covariance", "augmented_spans_space", "single_eigenvector"];
    let mut report = ExperimentReport::new("verify-safe-conditions", seed, &["condition", "instance", "difference", "flagged"]);
    for (which, name) in NAMES.iter().enumerate() {
        let rows = parallel_instances(200, |k| {
            let inst = safe_condition_instance(&mut rng_for(seed, ((which as u64) << 32) | k), which)?;
            let flags = check_safe_conditions(&inst, tol)?;
            let flagged = [flags.identity_cov, flags.aug_spans_space, flags.single_eigvec][which];
            let dec = decompose_instance(&inst, tol)?;
            Ok(vec![which as f64, k as f64, dec.direct_diff, f64::from(u8::from(flagged))])
        })?;
        let worst = rows.iter().map(|r| r[2]).fold(f64::INFINITY, f64::min);
        let unflagged = rows.iter().filter(|r| r[3] == 0.0).count();
        for row in rows {
            report.push_row(row)?;
        }
        report.check(name, worst >= -1e-10 && unflagged == 0, format!("min L_std(std) − L_std(aug) = {worst:.2e}, {unflagged} unflagged"));
    }

    let (literal, exact) = grid_3d_disagreements(tol)?;
    report.set_summary("grid_3d_literal_disagreements", literal as f64)?;
    report.set_summary("grid_3d_exact_disagreements", exact as f64)?;
    report.check("closed_form_3d", literal == 0 && exact == 0, format!("{literal} literal / {exact} exact disagreements on 10×10×10 grids"));
    Ok(report)
}

/// Disagreements between the 3D closed forms and the measured error change
/// on 10×10×10 grids of `(θ₁, θ₂, λ₂/λ₁)`: the literal inequality on
/// positive θ, the exact sign condition on signed θ. Points within 1e-8 of
/// neutral are skipped.
pub fn grid_3d_disagreements(tol: &ToleranceConfig) -> Result<(usize, usize)> {
    let x_std = DenseMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    let x_ext = DenseMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
    let positive: Vec<f64> = (0..10).map(|k| 0.1 + 0.2 * k as f64).collect();
    let signed: Vec<f64> = (0..10).map(|k| -1.9 + 0.4 * k as f64 + 0.05).collect();
    let ratios: Vec<f64> = (0..10).map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 9.0)).collect();
    let count = |thetas: &[f64], literal: bool| -> Result<usize> {
        let mut bad = 0;
        for &t1 in thetas {
            for &t2 in thetas {
                for &r in &ratios {
                    let theta = Vector::from_column_slice(&[t1, t2, 1.0]);
                    let sigma = DenseMatrix::from_diagonal(&Vector::from_column_slice(&[1.0, r, 1.0]));
                    let measured = decompose(&theta, &x_std, &x_ext, &sigma, tol)?.increase();
                    debug_assert!((measured - increase_3d(&theta, 1.0, r)).abs() < 1e-8);
                    if measured.abs() <= 1e-8 {
                        continue;
                    }
                    let predicted = if literal { literal_condition_3d(&theta, 1.0, r) } else { condition_3d(&theta, 1.0, r) };
                    bad += usize::from(predicted != (measured > 0.0));
                }
            }
        }
        Ok(bad)
    };
    Ok((count(&positive, true)?, count(&signed, false)?))
}

fn verify_variance(seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let rows = parallel_instances(200, |k| {
        let inst = random_instance(&mut rng_for(seed, k), 12);
        let rep = variance_difference(&inst.model.sigma, &inst.standard.x, &inst.extra.x, 1.0, tol)?;
        let err = (rep.predicted_diff - rep.direct_diff).abs() / (1.0 + rep.direct_diff.abs());
        Ok(vec![k as f64, inst.dim() as f64, rep.t1, rep.t2, rep.direct_diff, err])
    })?;
    let mut report = ExperimentReport::new("verify-variance", seed, &["instance", "d", "t1", "t2", "direct", "rel_error"]);
    let worst = rows.iter().map(|r| r[5]).fold(0.0, f64::max);
    for row in rows {
        report.push_row(row)?;
    }
    report.check("trace_identity", worst <= 1e-8, format!("max relative error {worst:.2e} over 200 instances"));

    let (mc, analytic) = canonical_monte_carlo(100_000, seed, tol)?;
    let rel = (mc - analytic).abs() / analytic.abs();
    report.set_summary("mc_variance_difference", mc)?;
    report.set_summary("analytic_variance_difference", analytic)?;
    report.check("monte_carlo", rel <= 0.02, format!("Monte-Carlo {mc:.4} vs analytic {analytic:.4} ({:.2}%)", 100.0 * rel));
    Ok(report)
}

/// Monte-Carlo and analytic variance change with unit noise on the
/// canonical 3D instance.
pub fn canonical_monte_carlo(trials: usize, seed: u64, tol: &ToleranceConfig) -> Result<(f64, f64)> {
    let x_std = DenseMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    let x_ext = DenseMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
    let sigma = DenseMatrix::from_diagonal(&Vector::from_column_slice(&[1.0, 4.0, 1.0]));
    let theta = Vector::from_column_slice(&[1.0, 0.0, 5.0]);
    let opts = MonteCarloOptions { trials, seed, noisy_extra: true };
    let mc = monte_carlo_variance(&x_std, &x_ext, &sigma, &theta, 1.0, &opts, tol)?;
    let analytic = variance_difference(&sigma, &x_std, &x_ext, 1.0, tol)?.direct_diff;
    Ok((mc.v_aug - mc.v_std, analytic))
}

fn verify_kovanic(seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let rows = parallel_instances(200, |k| {
        let inst = random_instance(&mut rng_for(seed, k), 12);
        let sigma_std = inst.standard.x.transpose() * &inst.standard.x;
        let got = kovanic_pinv_sum(&sigma_std, &inst.extra.x, tol)?;
        let want = pinv(&(&sigma_std + inst.extra.x.transpose() * &inst.extra.x), tol)?;
        Ok(vec![k as f64, inst.dim() as f64, (&got - &want).norm() / (1.0 + want.norm())])
    })?;
    let mut report = ExperimentReport::new("verify-kovanic", seed, &["instance", "d", "frobenius_error"]);
    let worst = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    for row in rows {
        report.push_row(row)?;
    }
    report.check("pinv_identity", worst <= 1e-8, format!("max relative Frobenius error {worst:.2e}"));
    Ok(report)
}

fn verify_rst(seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    let rows = parallel_instances(200, |k| {
        let inst = random_rst_instance(&mut rng_for(seed, k), 10, tol)?;
        let sol = rst_fit(&inst.data, &inst.model.sigma, &inst.span, None, tol)?;
        let g = verify_rst_guarantees(&sol, &inst.data.x, &inst.model, &inst.domain, tol)?;
        let d = inst.model.dim();
        let max_iter = d - rank(&inst.data.x, tol)?;
        Ok(vec![k as f64, d as f64, sol.iterations as f64, max_iter as f64, g.std_error_pseudo, g.std_error_rst, g.rob_error_rst])
    })?;
    let mut report = ExperimentReport::new(
        "verify-rst",
        seed,
        &["instance", "d", "iterations", "max_iterations", "std_error_pseudo", "std_error_rst", "rob_error_rst"],
    );
    let mut failures = 0;
    for row in rows {
        let ok = row[2] <= row[3] && row[5] <= row[4] + 1e-10 && (row[6] - row[5]).abs() <= 1e-8;
        failures += usize::from(!ok);
        report.push_row(row)?;
    }
    report.check("random_instances", failures == 0, format!("{failures} of 200 instances violate a guarantee"));

    let spline = rst_spline_experiment(&RstSplineParams { trials: 10, ..Default::default() }, seed, tol)?;
    for a in spline.assertions {
        report.check(&format!("staircase_{}", a.name), a.passed, a.detail);
    }
    Ok(report)
}
