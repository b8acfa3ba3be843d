//! Minimum-ℓ1-norm counterexample: three input types repeated over `d`
//! blocks, where augmenting `x₁` with its perturbation `x₂` flips the
//! sparsity pattern of the fit and multiplies the standard error by Ω(d).
//!
//! The estimators depend only on which types occur in the sample, so the
//! expected errors are also computed exactly as a sum over the 7 possible
//! type sets.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::estimators::{
    domain_standard_error, l1_fit, DiscreteDomain, Estimator, LabeledData, NormKind, PopulationModel,
};
use crate::instances::rng_for;
use crate::linalg::{matrix_from_vectors, ToleranceConfig, Vector};
use crate::report::ExperimentReport;

/// Type-set bitmask: bit `k` set when `x_{k+1}` occurs in the sample.
pub type TypeSet = u8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Problem {
    /// Number of repeated 3-coordinate blocks.
    pub d: usize,
    pub delta: f64,
    /// Mass of `x₂` and `x₃` together.
    pub p: f64,
    /// Mass of `x₂`.
    pub eps: f64,
}

impl L1Problem {
    /// `p = 1/d²`, `ε = 1/d³`.
    pub fn new(d: usize, delta: f64) -> Result<Self> {
        let df = d as f64;
        Self::with_masses(d, delta, df.powi(-2), df.powi(-3))
    }

    pub fn with_masses(d: usize, delta: f64, p: f64, eps: f64) -> Result<Self> {
        if d == 0 {
            return Err(LabError::Config { field: "d".into(), message: "must be at least 1".into() });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LabError::Config { field: "delta".into(), message: "must lie in (0, 1)".into() });
        }
        if !(0.0 < eps && eps < p && p < 1.0) {
            return Err(LabError::Config { field: "p".into(), message: format!("need 0 < ε < p < 1, got ε = {eps}, p = {p}") });
        }
        Ok(Self { d, delta, p, eps })
    }

    pub fn dim(&self) -> usize {
        3 * self.d
    }

    /// The three block patterns `x₁, x₂, x₃`.
    pub fn blocks(&self) -> [[f64; 3]; 3] {
        let a = 1.0 + self.delta;
        [[a, 1.0, 0.0], [0.0, 1.0, a], [a, 0.0, 1.0]]
    }

    pub fn probs(&self) -> [f64; 3] {
        [1.0 - self.p, self.eps, self.p - self.eps]
    }

    /// Type `k` repeated over all blocks.
    pub fn point(&self, k: usize) -> Vector {
        let b = self.blocks()[k];
        Vector::from_fn(self.dim(), |j, _| b[j % 3])
    }

    pub fn theta_star(&self) -> Vector {
        Vector::from_element(self.dim(), 1.0)
    }

    /// Common target `xᵀθ* = d(2+δ)`.
    pub fn target(&self) -> f64 {
        self.d as f64 * (2.0 + self.delta)
    }

    /// Same masses and δ with a single block.
    pub fn single_block(&self) -> Self {
        Self { d: 1, ..*self }
    }

    /// `T(x₁) = T(x₂) = {x₁, x₂}`, `T(x₃) = {x₃}`.
    pub fn build_domain(&self) -> Result<DiscreteDomain> {
        DiscreteDomain::new(
            (0..3).map(|k| self.point(k)).collect(),
            self.probs().to_vec(),
            vec![vec![0, 1], vec![0, 1], vec![2]],
        )
    }

    pub fn population(&self) -> Result<PopulationModel> {
        PopulationModel::new(self.theta_star(), self.build_domain()?.covariance())
    }

    /// The types added by augmentation: all consistent perturbations.
    pub fn augmented_types(set: TypeSet) -> TypeSet {
        if set & 0b011 != 0 {
            set | 0b011
        } else {
            set
        }
    }

    /// Training system with one row per type in `set`.
    pub fn data(&self, set: TypeSet) -> Result<LabeledData> {
        let rows: Vec<Vector> = (0..3).filter(|k| set & (1 << k) != 0).map(|k| self.point(k)).collect();
        if rows.is_empty() {
            return Err(invalid("type set is empty"));
        }
        LabeledData::noiseless(matrix_from_vectors(&rows, self.dim()), &self.theta_star())
    }

    /// `P(E₁) = (1−p)ⁿ + (p−ε)ⁿ`: every sample is `x₁`, or every sample is `x₃`.
    pub fn p_single_type(&self, n: usize) -> f64 {
        (1.0 - self.p).powi(n as i32) + (self.p - self.eps).powi(n as i32)
    }

    /// Probability that the sample's type set is exactly `set`, by
    /// inclusion–exclusion over its subsets.
    pub fn set_probability(&self, set: TypeSet, n: usize) -> f64 {
        let probs = self.probs();
        let mut total = 0.0;
        for sub in 0..8u8 {
            if sub & !set != 0 {
                continue;
            }
            let mass: f64 = (0..3).filter(|k| sub & (1 << k) != 0).map(|k| probs[k]).sum();
            let sign = if (set.count_ones() - sub.count_ones()).is_multiple_of(2) { 1.0 } else { -1.0 };
            total += sign * mass.powi(n as i32);
        }
        total.max(0.0)
    }

    /// The displayed estimators under the all-`x₁` sample path.
    pub fn conditional_estimators_e1(&self) -> (Estimator, Estimator) {
        let a = 2.0 + self.delta;
        let std_block = [a / (1.0 + self.delta), 0.0, 0.0];
        let aug_block = [0.0, a, 0.0];
        let make = |b: [f64; 3]| {
            let theta = Vector::from_fn(self.dim(), |j, _| b[j % 3]);
            Estimator { norm: theta.lp_norm(1), residual: 0.0, theta, norm_kind: NormKind::L1 }
        };
        (make(std_block), make(aug_block))
    }

    /// `(L_std(std | E₁), L_std(aug | E₁)) = (εd²(2+δ)², (p−ε)d²(2+δ)²)`.
    pub fn conditional_errors_e1(&self) -> (f64, f64) {
        let scale = self.target().powi(2);
        (self.eps * scale, (self.p - self.eps) * scale)
    }

    /// Lower bound `(1−p)ⁿ(p−ε)/ε` on the error ratio.
    pub fn ratio_bound(&self, n: usize) -> f64 {
        (1.0 - self.p).powi(n as i32) * (self.p - self.eps) / self.eps
    }

    /// Standard errors `(std, aug)` of the LP fits for one type set.
    pub fn set_errors(&self, set: TypeSet, tol: &ToleranceConfig) -> Result<(f64, f64)> {
        let model = self.population()?;
        let domain = self.build_domain()?;
        let std = l1_fit(&self.data(set)?, None, tol)?;
        let aug = l1_fit(&self.data(Self::augmented_types(set))?, None, tol)?;
        Ok((
            domain_standard_error(&std.theta, &model, &domain)?,
            domain_standard_error(&aug.theta, &model, &domain)?,
        ))
    }

    /// Exact `(E[L_std(std)], E[L_std(aug)])` for `n` samples.
    ///
    /// The block sums of any ℓ1-optimal fit solve the single-block problem
    /// with target `d(2+δ)`, and the error depends only on those sums, so
    /// each type set is fitted once in 3 dimensions and scaled by `d²`.
    pub fn exact_expected_errors(&self, n: usize, tol: &ToleranceConfig) -> Result<(f64, f64)> {
        let unit = self.single_block();
        let scale = (self.d as f64).powi(2);
        let mut std = 0.0;
        let mut aug = 0.0;
        for set in 1..8u8 {
            let prob = self.set_probability(set, n);
            if prob == 0.0 {
                continue;
            }
            let (s, a) = unit.set_errors(set, tol)?;
            std += prob * s * scale;
            aug += prob * a * scale;
        }
        Ok((std, aug))
    }

    /// Monte-Carlo `(E[L_std(std)], E[L_std(aug)])` with full-dimensional LP
    /// fits. Trial `k` draws from stream `k`; each distinct type set is
    /// fitted once.
    pub fn monte_carlo_errors(&self, n: usize, trials: usize, seed: u64, tol: &ToleranceConfig) -> Result<(f64, f64)> {
        if trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let weights = WeightedIndex::new(self.probs()).map_err(|e| invalid(e.to_string()))?;
        let sets: Vec<TypeSet> = (0..trials as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = rng_for(seed, k);
                (0..n).fold(0u8, |acc, _| acc | (1 << weights.sample(&mut rng)))
            })
            .collect();
        let mut distinct = sets.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let errors: HashMap<TypeSet, (f64, f64)> = distinct
            .par_iter()
            .map(|&s| self.set_errors(s, tol).map(|e| (s, e)))
            .collect::<Result<_>>()?;
        let (std, aug) = sets.iter().fold((0.0, 0.0), |(a, b), s| (a + errors[s].0, b + errors[s].1));
        Ok((std / trials as f64, aug / trials as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    pub d_list: Vec<usize>,
    /// Samples per block: `n = round(gamma · d)`.
    pub gamma: f64,
    pub delta: f64,
    /// Monte-Carlo trials, run only for `d ≤ mc_max_d`.
    pub trials: usize,
    pub mc_max_d: usize,
}

impl Default for L1Config {
    fn default() -> Self {
        Self { d_list: vec![10, 50, 100, 500], gamma: 1.0, delta: 0.5, trials: 4000, mc_max_d: 12 }
    }
}

pub const L1_COLUMNS: [&str; 13] = [
    "d",
    "n",
    "p",
    "eps",
    "p_single_type",
    "bound",
    "exact_std",
    "exact_aug",
    "exact_ratio",
    "mc_trials",
    "mc_std",
    "mc_aug",
    "mc_ratio",
];

/// Default masses, except `d = 1` where `p = 1/d²` would be degenerate.
fn small_problem(d: usize, delta: f64) -> Result<L1Problem> {
    if d == 1 {
        L1Problem::with_masses(1, delta, 0.1, 0.01)
    } else {
        L1Problem::new(d, delta)
    }
}

/// Largest gap between the closed forms and the LP for `d ≤ 4`: the ℓ1
/// optimal values, and the conditional errors against direct evaluation.
pub fn closed_form_gaps(delta: f64, tol: &ToleranceConfig) -> Result<(f64, f64)> {
    let mut value_gap: f64 = 0.0;
    let mut error_gap: f64 = 0.0;
    for d in 1..=4 {
        let prob = small_problem(d, delta)?;
        let (std, aug) = prob.conditional_estimators_e1();
        let lp_std = l1_fit(&prob.data(0b001)?, None, tol)?;
        let lp_aug = l1_fit(&prob.data(0b011)?, None, tol)?;
        value_gap = value_gap.max((lp_std.norm - std.norm).abs()).max((lp_aug.norm - aug.norm).abs());

        let model = prob.population()?;
        let domain = prob.build_domain()?;
        let (want_std, want_aug) = prob.conditional_errors_e1();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        error_gap = error_gap
            .max(rel(domain_standard_error(&std.theta, &model, &domain)?, want_std))
            .max(rel(domain_standard_error(&aug.theta, &model, &domain)?, want_aug))
            .max(rel(domain_standard_error(&lp_std.theta, &model, &domain)?, want_std))
            .max(rel(domain_standard_error(&lp_aug.theta, &model, &domain)?, want_aug));
    }
    Ok((value_gap, error_gap))
}

/// Bound and error ratio `L_std(aug)/L_std(std)` across `d`.
pub fn ratio_experiment(cfg: &L1Config, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    if cfg.d_list.is_empty() {
        return Err(LabError::Config { field: "d_list".into(), message: "must not be empty".into() });
    }
    if !(cfg.gamma > 0.0) {
        return Err(LabError::Config { field: "gamma".into(), message: "must be positive".into() });
    }
    let mut report = ExperimentReport::new("l1-ratio", seed, &L1_COLUMNS).with_config(cfg)?;
    let mut bounds = Vec::new();
    let mut exact = Vec::new();
    let mut min_exact_over_bound = f64::INFINITY;
    for (idx, &d) in cfg.d_list.iter().enumerate() {
        let prob = L1Problem::new(d, cfg.delta)?;
        let n = ((cfg.gamma * d as f64).round() as usize).max(1);
        let bound = prob.ratio_bound(n);
        let (exact_std, exact_aug) = prob.exact_expected_errors(n, tol)?;
        let exact_ratio = exact_aug / exact_std;
        min_exact_over_bound = min_exact_over_bound.min(exact_ratio / bound);
        exact.push((d as f64, exact_ratio));
        let (mc_trials, mc_std, mc_aug, mc_ratio) = if d <= cfg.mc_max_d && cfg.trials > 0 {
            let (s, a) = prob.monte_carlo_errors(n, cfg.trials, seed.wrapping_add(idx as u64), tol)?;
            (cfg.trials as f64, s, a, if s > 0.0 { a / s } else { 0.0 })
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        bounds.push((d as f64, bound));
        report.push_row(vec![
            d as f64,
            n as f64,
            prob.p,
            prob.eps,
            prob.p_single_type(n),
            bound,
            exact_std,
            exact_aug,
            exact_ratio,
            mc_trials,
            mc_std,
            mc_aug,
            mc_ratio,
        ])?;
    }
    let min_slope = |pts: &[(f64, f64)]| {
        pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).fold(f64::INFINITY, f64::min)
    };
    let (bound_slope, exact_slope) = (min_slope(&bounds), min_slope(&exact));
    let many = bounds.len() >= 2;
    report.check("bound_grows_linearly", !many || bound_slope >= 0.5, format!("min slope of bound in d = {bound_slope:.3}"));
    report.check("exact_ratio_grows_linearly", !many || exact_slope >= 0.5, format!("min slope of exact ratio in d = {exact_slope:.3}"));
    // The exact ratio of expectations is not the event-weighted mixture of
    // conditional ratios, so it can sit slightly below the bound.
    report.set_summary("min_exact_over_bound", min_exact_over_bound)?;
    let (value_gap, error_gap) = closed_form_gaps(cfg.delta, tol)?;
    report.check("closed_form_lp_value", value_gap <= 1e-8, format!("max |‖θ‖₁ − LP| = {value_gap:.2e} for d ≤ 4"));
    report.check("closed_form_errors", error_gap <= 1e-10, format!("max relative error gap = {error_gap:.2e}"));
    Ok(report)
}
