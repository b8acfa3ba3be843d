//! Staircase variant with continuous intervals `[i, i+ε]` where augmenting
//! with the whole interval makes the standard error grow with the number of
//! stairs while the standard fit's error vanishes.
//!
//! Errors are estimated through two event splits: E₁ (only the lower half of
//! the stairs is sampled) for the augmented fit and E₂ (no sample is
//! perturbed) for the standard fit. Event probabilities are exact; the
//! conditional errors are Monte-Carlo means over fits drawn conditionally.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{integrate, penalty_matrix, SplineBasis, GAUSS4};
use crate::error::{invalid, LabError, Result};
use crate::instances::rng_for;
use crate::linalg::{matrix_from_vectors, solve_constrained_quadratic, DenseMatrix, ToleranceConfig, Vector};
use crate::report::ExperimentReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntervalConfig {
    pub s_list: Vec<usize>,
    /// Upper-half mass is `γ = c/s`.
    pub c: f64,
    pub epsilon: f64,
    /// Samples per stair: `n = round(n_ratio · s)`.
    pub n_ratio: f64,
    /// Monte-Carlo fits per event.
    pub trials: usize,
    /// Extra knots inside each gap `(i+ε, i+1)`.
    pub gap_knots: usize,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        Self {
            s_list: vec![4, 8, 16, 32],
            c: 0.5,
            epsilon: 0.1,
            n_ratio: 1.0,
            trials: 1000,
            gap_knots: 3,
        }
    }
}

/// `δ(s) = (log s⁷ − log(s⁷ − 1)) / s`.
pub fn delta_schedule(s: usize) -> f64 {
    let s = s as f64;
    -(-s.powi(-7)).ln_1p() / s
}

/// One instance of the interval problem at a fixed stair count.
#[derive(Debug, Clone)]
pub struct IntervalProblem {
    pub s: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub n: usize,
    pub w: Vec<f64>,
    pub basis: SplineBasis,
    pub penalty: DenseMatrix,
    pub tol: ToleranceConfig,
}

impl IntervalProblem {
    pub fn new(s: usize, delta: f64, cfg: &IntervalConfig, tol: &ToleranceConfig) -> Result<Self> {
        if s < 2 || !s.is_multiple_of(2) {
            return Err(invalid(format!("stair count {s} must be even and at least 2")));
        }
        if !(0.0..1.0).contains(&cfg.c) {
            return Err(LabError::Config { field: "c".into(), message: "must lie in [0, 1)".into() });
        }
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
            return Err(LabError::Config { field: "epsilon".into(), message: "must lie in (0, 1/2)".into() });
        }
        if !(cfg.n_ratio > 0.0) {
            return Err(LabError::Config { field: "n_ratio".into(), message: "must be positive".into() });
        }
        let gamma = cfg.c / s as f64;
        let half = s / 2;
        let w = (0..s)
            .map(|i| if i < half { (1.0 - gamma) / half as f64 } else { gamma / half as f64 })
            .collect();
        let mut breaks = Vec::new();
        for i in 0..s {
            let lo = i as f64;
            breaks.push(lo);
            breaks.push(lo + cfg.epsilon);
            if i + 1 < s {
                let step = (1.0 - cfg.epsilon) / (cfg.gap_knots + 1) as f64;
                breaks.extend((1..=cfg.gap_knots).map(|k| lo + cfg.epsilon + k as f64 * step));
            }
        }
        let basis = SplineBasis::new(breaks)?;
        let penalty = penalty_matrix(&basis);
        Ok(Self {
            s,
            epsilon: cfg.epsilon,
            delta,
            gamma,
            n: ((cfg.n_ratio * s as f64).round() as usize).max(1),
            w,
            basis,
            penalty,
            tol: *tol,
        })
    }

    /// `P(E₁) = (1 − γ)ⁿ`.
    pub fn p_lower_only(&self) -> f64 {
        (1.0 - self.gamma).powi(self.n as i32)
    }

    /// `P(E₂) = (1 − δ)ⁿ`.
    pub fn p_unperturbed(&self) -> f64 {
        (1.0 - self.delta).powi(self.n as i32)
    }

    fn solve(&self, rows: Vec<Vector>, targets: Vec<f64>) -> Result<Vector> {
        let d = self.basis.dim();
        let a = matrix_from_vectors(&rows, d);
        let b = Vector::from_vec(targets);
        solve_constrained_quadratic(&self.penalty, &Vector::zeros(d), &a, &b, &self.tol)
    }

    /// Minimum-curvature interpolant of `(t, ⌊t⌋)` pairs.
    pub fn standard_fit(&self, ts: &[f64]) -> Result<Vector> {
        let mut ts = ts.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let rows = ts.iter().map(|&t| self.basis.features(t)).collect::<Result<Vec<_>>>()?;
        self.solve(rows, ts.iter().map(|t| t.floor()).collect())
    }

    /// Minimum-curvature fit held at `i` on each sampled interval
    /// `[i, i+ε]`: value `i` and zero slope at both ends.
    pub fn interval_fit(&self, stairs: &[usize]) -> Result<Vector> {
        let mut stairs = stairs.to_vec();
        stairs.sort_unstable();
        stairs.dedup();
        let mut rows = Vec::with_capacity(4 * stairs.len());
        let mut targets = Vec::with_capacity(4 * stairs.len());
        for &i in &stairs {
            for t in [i as f64, i as f64 + self.epsilon] {
                rows.push(self.basis.features(t)?);
                targets.push(i as f64);
                rows.push(self.basis.derivative_features(t, 1)?);
                targets.push(0.0);
            }
        }
        self.solve(rows, targets)
    }

    /// `Σᵢ wᵢ[(1−δ)(f(i)−i)² + (δ/ε)∫_i^{i+ε}(f(u)−i)² du]`. The fit is one
    /// cubic on each interval, so four Gauss points are exact.
    pub fn risk(&self, theta: &Vector) -> Result<f64> {
        let mut total = 0.0;
        for (i, &wi) in self.w.iter().enumerate() {
            let lo = i as f64;
            let at_stair = (self.basis.evaluate(theta, lo)? - lo).powi(2);
            let mut err = Ok(());
            let integral = integrate(&GAUSS4, lo, lo + self.epsilon, |u| match self.basis.evaluate(theta, u) {
                Ok(f) => (f - lo).powi(2),
                Err(e) => {
                    err = Err(e);
                    0.0
                }
            });
            err?;
            total += wi * ((1.0 - self.delta) * at_stair + self.delta / self.epsilon * integral);
        }
        Ok(total)
    }

    /// `∫_{t*}^{end} f′(u)² du`, the slope energy right of stair `t*`.
    pub fn slope_energy_beyond(&self, theta: &Vector, t_star: f64) -> Result<f64> {
        let mut total = 0.0;
        for w in self.basis.breakpoints().windows(2) {
            if w[0] < t_star {
                continue;
            }
            let mut err = Ok(());
            total += integrate(&GAUSS4, w[0], w[1], |u| match self.basis.derivative_features(u, 1) {
                Ok(x) => x.dot(theta).powi(2),
                Err(e) => {
                    err = Err(e);
                    0.0
                }
            });
            err?;
        }
        Ok(total)
    }

    fn draw_stair<R: Rng>(&self, rng: &mut R, weights: &WeightedIndex<f64>) -> usize {
        weights.sample(rng)
    }

    fn perturbation<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.random_range(0.0..self.epsilon)
    }
}

/// Conditional stair draws under E₁ (lower half only) or its complement.
fn stairs_given_lower<R: Rng>(p: &IntervalProblem, rng: &mut R, lower_only: bool) -> Result<Vec<usize>> {
    let half = p.s / 2;
    if lower_only {
        return Ok((0..p.n).map(|_| rng.random_range(0..half)).collect());
    }
    let weights = WeightedIndex::new(&p.w).map_err(|e| invalid(e.to_string()))?;
    // P(E₁ᶜ) ≥ 1 − e^{-c·n/s}, so rejection terminates quickly.
    for _ in 0..1_000_000 {
        let stairs: Vec<usize> = (0..p.n).map(|_| p.draw_stair(rng, &weights)).collect();
        if stairs.iter().any(|&i| i >= half) {
            return Ok(stairs);
        }
    }
    Err(LabError::NumericFailure("rejection sampling for E₁ᶜ did not terminate".into()))
}

/// Conditional inputs under E₂ (nothing perturbed) or its complement. The
/// complement draws the number of perturbed samples from the binomial
/// conditioned on being positive, since `P(E₂ᶜ)` is tiny.
fn inputs_given_unperturbed<R: Rng>(p: &IntervalProblem, rng: &mut R, unperturbed: bool) -> Result<Vec<f64>> {
    let weights = WeightedIndex::new(&p.w).map_err(|e| invalid(e.to_string()))?;
    let stairs: Vec<usize> = (0..p.n).map(|_| p.draw_stair(rng, &weights)).collect();
    let mut ts: Vec<f64> = stairs.iter().map(|&i| i as f64).collect();
    if unperturbed {
        return Ok(ts);
    }
    let k = positive_binomial(p.n, p.delta, rng);
    for pos in index::sample(rng, p.n, k) {
        ts[pos] += p.perturbation(rng);
    }
    Ok(ts)
}

/// `K ~ Binomial(n, q)` conditioned on `K ≥ 1`, by inverse CDF.
fn positive_binomial<R: Rng>(n: usize, q: f64, rng: &mut R) -> usize {
    let log_pmf = |k: usize| {
        let ln_choose: f64 = (1..=k).map(|j| ((n - k + j) as f64 / j as f64).ln()).sum();
        ln_choose + k as f64 * q.ln() + (n - k) as f64 * (-q).ln_1p()
    };
    let weights: Vec<f64> = (1..=n).map(|k| (log_pmf(k) - log_pmf(1)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k + 1;
        }
        u -= w;
    }
    n
}

/// Conditional means for one stair count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub gamma: f64,
    pub p_lower_only: f64,
    pub p_unperturbed: f64,
    pub aug_risk_lower_only: f64,
    pub aug_risk_otherwise: f64,
    pub std_risk_unperturbed: f64,
    pub std_risk_otherwise: f64,
    /// Largest slope energy right of the highest sampled stair under E₁.
    pub flat_energy_max: f64,
}

impl IntervalEstimate {
    pub fn aug_risk(&self) -> f64 {
        self.p_lower_only * self.aug_risk_lower_only + (1.0 - self.p_lower_only) * self.aug_risk_otherwise
    }

    pub fn std_risk(&self) -> f64 {
        self.p_unperturbed * self.std_risk_unperturbed + (1.0 - self.p_unperturbed) * self.std_risk_otherwise
    }

    pub fn ratio(&self) -> f64 {
        self.aug_risk() / self.std_risk()
    }
}

/// Fits each distinct key once; keys are sorted so the work split does not
/// depend on sampling order.
fn fit_unique<K, F>(keys: &[K], fit: F) -> Result<HashMap<K, (Vector, f64)>>
where
    K: Clone + Ord + std::hash::Hash + Send + Sync,
    F: Fn(&K) -> Result<(Vector, f64)> + Sync,
{
    let mut unique: Vec<K> = keys.to_vec();
    unique.sort();
    unique.dedup();
    let fits = unique.par_iter().map(|k| fit(k).map(|v| (k.clone(), v))).collect::<Result<Vec<_>>>()?;
    Ok(fits.into_iter().collect())
}

fn stair_key(stairs: &[usize], s: usize) -> Vec<bool> {
    let mut key = vec![false; s];
    for &i in stairs {
        key[i] = true;
    }
    key
}

fn key_stairs(key: &[bool]) -> Vec<usize> {
    key.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Event-decomposed error estimates for one problem. Trial `k` of event `e`
/// draws from stream `4k + e` of the seed.
pub fn estimate_interval(p: &IntervalProblem, trials: usize, seed: u64) -> Result<IntervalEstimate> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let stream = |k: usize, e: u64| rng_for(seed, 4 * k as u64 + e);

    let aug_mean = |lower_only: bool, event: u64| -> Result<(f64, f64)> {
        let draws = (0..trials)
            .map(|k| stairs_given_lower(p, &mut stream(k, event), lower_only).map(|st| stair_key(&st, p.s)))
            .collect::<Result<Vec<_>>>()?;
        let fits = fit_unique(&draws, |key| {
            let stairs = key_stairs(key);
            let theta = p.interval_fit(&stairs)?;
            let risk = p.risk(&theta)?;
            let top = *stairs.last().expect("at least one stair") as f64;
            let flat = if lower_only { p.slope_energy_beyond(&theta, top)? } else { 0.0 };
            Ok((Vector::from_vec(vec![risk, flat]), 0.0))
        })?;
        let mean = draws.iter().map(|k| fits[k].0[0]).sum::<f64>() / trials as f64;
        let flat = draws.iter().map(|k| fits[k].0[1]).fold(0.0, f64::max);
        Ok((mean, flat))
    };
    let (aug_lower, flat) = aug_mean(true, 0)?;
    let (aug_other, _) = aug_mean(false, 1)?;

    let line_draws = (0..trials)
        .map(|k| inputs_given_unperturbed(p, &mut stream(k, 2), true).map(|ts| stair_key(&ts.iter().map(|&t| t as usize).collect::<Vec<_>>(), p.s)))
        .collect::<Result<Vec<_>>>()?;
    let line_fits = fit_unique(&line_draws, |key| {
        let ts: Vec<f64> = key_stairs(key).into_iter().map(|i| i as f64).collect();
        let theta = p.standard_fit(&ts)?;
        Ok((Vector::zeros(0), p.risk(&theta)?))
    })?;
    let std_line = line_draws.iter().map(|k| line_fits[k].1).sum::<f64>() / trials as f64;

    let std_other = (0..trials)
        .into_par_iter()
        .map(|k| {
            let ts = inputs_given_unperturbed(p, &mut stream(k, 3), false)?;
            p.risk(&p.standard_fit(&ts)?)
        })
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / trials as f64;

    Ok(IntervalEstimate {
        s: p.s,
        n: p.n,
        delta: p.delta,
        gamma: p.gamma,
        p_lower_only: p.p_lower_only(),
        p_unperturbed: p.p_unperturbed(),
        aug_risk_lower_only: aug_lower,
        aug_risk_otherwise: aug_other,
        std_risk_unperturbed: std_line,
        std_risk_otherwise: std_other,
        flat_energy_max: flat,
    })
}

pub const INTERVAL_COLUMNS: [&str; 14] = [
    "s",
    "n",
    "delta",
    "gamma",
    "p_lower_only",
    "p_unperturbed",
    "aug_risk_lower_only",
    "aug_risk_otherwise",
    "std_risk_unperturbed",
    "std_risk_otherwise",
    "aug_risk",
    "std_risk",
    "ratio",
    "flat_energy_max",
];

/// `R(aug)/R(std)` across stair counts with `δ = δ(s)` and `γ = c/s`.
pub fn interval_ratio_experiment(cfg: &IntervalConfig, seed: u64, tol: &ToleranceConfig) -> Result<ExperimentReport> {
    if cfg.s_list.is_empty() {
        return Err(LabError::Config { field: "s_list".into(), message: "must not be empty".into() });
    }
    if cfg.trials == 0 {
        return Err(LabError::Config { field: "trials".into(), message: "must be at least 1".into() });
    }
    let mut report = ExperimentReport::new("spline-interval-ratio", seed, &INTERVAL_COLUMNS).with_config(cfg)?;
    let mut ratios = Vec::new();
    let mut flat_max: f64 = 0.0;
    for (idx, &s) in cfg.s_list.iter().enumerate() {
        let p = IntervalProblem::new(s, delta_schedule(s), cfg, tol)?;
        let est = estimate_interval(&p, cfg.trials, seed.wrapping_add(idx as u64 * 0x9E37_79B9))?;
        ratios.push(est.ratio());
        flat_max = flat_max.max(est.flat_energy_max);
        report.push_row(vec![
            s as f64,
            est.n as f64,
            est.delta,
            est.gamma,
            est.p_lower_only,
            est.p_unperturbed,
            est.aug_risk_lower_only,
            est.aug_risk_otherwise,
            est.std_risk_unperturbed,
            est.std_risk_otherwise,
            est.aug_risk(),
            est.std_risk(),
            est.ratio(),
            est.flat_energy_max,
        ])?;
    }
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    report.check("ratio_strictly_increasing", increasing, format!("ratios {ratios:.3?}"));
    report.check("flat_extrapolation", flat_max <= 1e-6, format!("max slope energy beyond t* = {flat_max:.3e}"));
    Ok(report)
}
