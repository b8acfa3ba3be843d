//! Browser bindings for three interactive views: the 3D safe-direction
//! explorer, the staircase spline fits, and the ℓ1 error-ratio bound.
//! Each export returns a JSON string; the plain functions underneath also
//! run natively.

use serde::Serialize;
use tradeoff_lab::instances::rng_for;
use tradeoff_lab::l1lab::L1Problem;
use tradeoff_lab::linalg::{DenseMatrix, ToleranceConfig, Vector};
use tradeoff_lab::spline::{fig2_trial, StaircaseConfig, StaircaseProblem};
use tradeoff_lab::tradeoff::{condition_3d, increase_3d, safe_region_scan};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct TradeoffView {
    /// Angles `φ` of the extra direction `(cos φ, sin φ, 0)`.
    pub angles: Vec<f64>,
    /// `L_std(aug) − L_std(std)` for each angle.
    pub increase: Vec<f64>,
    /// Grid over `(θ₁, θ₂)` in `[-range, range]²`, row-major with θ₂ rows:
    /// error change when `e₁ + e₂` is added.
    pub grid_range: f64,
    pub grid_size: usize,
    pub grid_increase: Vec<f64>,
    /// Error change from `e₁ + e₂` at the chosen θ*.
    pub diagonal_increase: f64,
    pub diagonal_hurts: bool,
}

/// Canonical 3D problem: `X_std = e₃ᵀ`, `Σ = diag(1, λ₂/λ₁, 1)`,
/// `θ* = (θ₁, θ₂, 1)`.
pub fn tradeoff_view(theta1: f64, theta2: f64, lambda_ratio: f64, angles: usize) -> Result<TradeoffView, String> {
    if !(lambda_ratio > 0.0 && lambda_ratio.is_finite()) {
        return Err("λ₂/λ₁ must be positive".into());
    }
    let angles = angles.clamp(4, 720);
    let x_std = DenseMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    let sigma = DenseMatrix::from_diagonal(&Vector::from_column_slice(&[1.0, lambda_ratio, 1.0]));
    let theta = Vector::from_column_slice(&[theta1, theta2, 1.0]);
    let phis: Vec<f64> = (0..angles).map(|k| std::f64::consts::PI * k as f64 / angles as f64).collect();
    let dirs: Vec<Vector> = phis.iter().map(|p| Vector::from_column_slice(&[p.cos(), p.sin(), 0.0])).collect();
    let scan = safe_region_scan(&x_std, &sigma, &theta, &dirs, &ToleranceConfig::default()).map_err(|e| e.to_string())?;

    let (range, size) = (2.0, 61);
    let step = 2.0 * range / (size - 1) as f64;
    let mut grid = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let t = Vector::from_column_slice(&[-range + j as f64 * step, -range + i as f64 * step, 1.0]);
            grid.push(increase_3d(&t, 1.0, lambda_ratio));
        }
    }
    Ok(TradeoffView {
        angles: phis,
        increase: scan.iter().map(|p| p.increase).collect(),
        grid_range: range,
        grid_size: size,
        grid_increase: grid,
        diagonal_increase: increase_3d(&theta, 1.0, lambda_ratio),
        diagonal_hurts: condition_3d(&theta, 1.0, lambda_ratio),
    })
}

#[derive(Debug, Serialize)]
pub struct SplineView {
    pub t: Vec<f64>,
    pub truth: Vec<f64>,
    pub standard: Vec<f64>,
    pub augmented: Vec<f64>,
    pub rst: Vec<f64>,
    pub train_t: Vec<f64>,
    pub train_y: Vec<f64>,
    pub augment_t: Vec<f64>,
    pub std_error: f64,
    pub aug_error: f64,
    pub rst_error: f64,
}

/// One staircase draw with its standard, augmented and RST spline fits.
pub fn spline_view(seed: u64, n: usize, s: usize, w_low_mass: f64, points: usize) -> Result<SplineView, String> {
    let cfg = StaircaseConfig { s, w_low_mass, ..StaircaseConfig::default() };
    let problem = StaircaseProblem::new(&cfg, &ToleranceConfig::default()).map_err(|e| e.to_string())?;
    let population = problem.population().map_err(|e| e.to_string())?;
    let trial = fig2_trial(&problem, &population, n.max(1), &mut rng_for(seed, 0)).map_err(|e| e.to_string())?;
    let (lo, hi) = problem.basis.domain();
    let last = points.clamp(2, 2000) - 1;
    let t: Vec<f64> = (0..=last).map(|k| lo + (hi - lo) * k as f64 / last as f64).collect();
    let eval = |theta: &Vector| -> Result<Vec<f64>, String> {
        t.iter().map(|&u| problem.basis.evaluate(theta, u).map_err(|e| e.to_string())).collect()
    };
    Ok(SplineView {
        standard: eval(&trial.std_fit.theta)?,
        augmented: eval(&trial.aug_fit.theta)?,
        rst: eval(&trial.rst_theta)?,
        train_t: trial.sample.ts(problem.epsilon),
        train_y: trial.sample.data.y.iter().copied().collect(),
        augment_t: trial.augmentations.ts(problem.epsilon),
        std_error: trial.std_error,
        aug_error: trial.aug_error,
        rst_error: trial.rst_error,
        truth: t.iter().map(|u| u.floor().min(problem.s as f64 - 1.0)).collect(),
        t,
    })
}

#[derive(Debug, Serialize)]
pub struct L1View {
    pub d: usize,
    pub n: usize,
    pub bound: f64,
    pub exact_ratio: f64,
    pub exact_std: f64,
    pub exact_aug: f64,
    pub p_single_type: f64,
}

/// Analytic bound and exact error ratio for `n = round(γd)` samples.
pub fn l1_view(d: usize, gamma: f64, delta: f64) -> Result<L1View, String> {
    let problem = L1Problem::new(d, delta).map_err(|e| e.to_string())?;
    let n = ((gamma * d as f64).round() as usize).max(1);
    let (exact_std, exact_aug) = problem.exact_expected_errors(n, &ToleranceConfig::default()).map_err(|e| e.to_string())?;
    Ok(L1View {
        d,
        n,
        bound: problem.ratio_bound(n),
        exact_ratio: exact_aug / exact_std,
        exact_std,
        exact_aug,
        p_single_type: problem.p_single_type(n),
    })
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = tradeoffView)]
pub fn tradeoff_view_js(theta1: f64, theta2: f64, lambda_ratio: f64, angles: usize) -> Result<String, JsError> {
    to_json(tradeoff_view(theta1, theta2, lambda_ratio, angles))
}

#[wasm_bindgen(js_name = splineView)]
pub fn spline_view_js(seed: u32, n: usize, s: usize, w_low_mass: f64, points: usize) -> Result<String, JsError> {
    to_json(spline_view(u64::from(seed), n, s, w_low_mass, points))
}

#[wasm_bindgen(js_name = l1View)]
pub fn l1_view_js(d: usize, gamma: f64, delta: f64) -> Result<String, JsError> {
    to_json(l1_view(d, gamma, delta))
}
