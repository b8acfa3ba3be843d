//! The staircase problem: `f*(t) = ⌊t⌋` on `{0, ε, 1, 1+ε, …}`, fitted by
//! minimum-curvature cubic splines with and without augmentation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{penalty_matrix, SplineBasis};
use crate::error::{invalid, mismatch, LabError, Result};
use crate::estimators::{DiscreteDomain, Estimator, ExtraData, LabeledData, NormKind, PopulationModel};
use crate::instances::rng_for;
use crate::linalg::{
    matrix_from_vectors, null_basis, null_projector, rank, solve_constrained_quadratic, sym_eigen, sym_root_inv, DenseMatrix,
    ToleranceConfig, Vector,
};
use crate::report::{mean_std, ExperimentReport};
use crate::rst::{build_constraint_basis, verify_rst_guarantees, PerturbationSpan, RSTSolution, RstGuarantees};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaircaseConfig {
    pub s: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Total mass of stairs `0..s/2` when `w` is not given explicitly; the
    /// mass is spread evenly within each half. `0.5` gives uniform `w`.
    pub w_low_mass: f64,
    pub w: Option<Vec<f64>>,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            s: 10,
            epsilon: 0.1,
            delta: 0.1,
            w_low_mass: 0.9,
            w: None,
        }
    }
}

impl StaircaseConfig {
    pub fn uniform(s: usize, epsilon: f64, delta: f64) -> Self {
        Self {
            s,
            epsilon,
            delta,
            w_low_mass: 0.5,
            w: None,
        }
    }

    pub fn stair_weights(&self) -> Result<Vec<f64>> {
        if let Some(w) = &self.w {
            return Ok(w.clone());
        }
        if !(0.0..=1.0).contains(&self.w_low_mass) {
            return Err(LabError::Config {
                field: "w_low_mass".into(),
                message: "must lie in [0, 1]".into(),
            });
        }
        let low = self.s.div_ceil(2);
        let high = self.s - low;
        Ok((0..self.s)
            .map(|i| {
                if high == 0 {
                    1.0 / low as f64
                } else if i < low {
                    self.w_low_mass / low as f64
                } else {
                    (1.0 - self.w_low_mass) / high as f64
                }
            })
            .collect())
    }
}

/// One staircase input: stair `i`, optionally shifted to `i + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StairPoint {
    pub stair: usize,
    pub shifted: bool,
}

impl StairPoint {
    pub fn t(&self, epsilon: f64) -> f64 {
        self.stair as f64 + if self.shifted { epsilon } else { 0.0 }
    }

    /// Domain index: `2·stair + shifted`.
    pub fn index(&self) -> usize {
        2 * self.stair + self.shifted as usize
    }
}

#[derive(Debug, Clone)]
pub struct StaircaseProblem {
    pub s: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub w: Vec<f64>,
    pub basis: SplineBasis,
    pub penalty: DenseMatrix,
    /// `(M + shift)^{-1/2}`, the rotation to minimum-Euclidean-norm form.
    pub root: DenseMatrix,
    /// `(M + shift)^{1/2}`, mapping coefficients into rotated coordinates.
    pub root_inverse: DenseMatrix,
    pub shift: Option<f64>,
    /// Minimum-penalty interpolant of all `2s` domain points.
    pub theta_star: Vector,
    /// `θ*` in rotated coordinates: `theta_star = root · theta_star_rotated`.
    pub theta_star_rotated: Vector,
    pub tol: ToleranceConfig,
}

impl StaircaseProblem {
    pub fn new(cfg: &StaircaseConfig, tol: &ToleranceConfig) -> Result<Self> {
        if cfg.s < 2 {
            return Err(LabError::Config { field: "s".into(), message: "need at least 2 stairs".into() });
        }
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
            return Err(LabError::Config { field: "epsilon".into(), message: "must lie in (0, 1/2)".into() });
        }
        if !(0.0..=1.0).contains(&cfg.delta) {
            return Err(LabError::Config { field: "delta".into(), message: "must lie in [0, 1]".into() });
        }
        let w = cfg.stair_weights()?;
        if w.len() != cfg.s || w.iter().any(|&p| !(p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(LabError::Config {
                field: "w".into(),
                message: format!("must be {} nonnegative weights summing to 1", cfg.s),
            });
        }
        tol.validate()?;
        let basis = SplineBasis::staircase(cfg.s, cfg.epsilon)?;
        let penalty = penalty_matrix(&basis);
        let root = sym_root_inv(&penalty, tol)?;
        let root_inverse = shifted_sqrt(&penalty, root.shift.unwrap_or(0.0), tol)?;
        let mut problem = Self {
            s: cfg.s,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            w,
            basis,
            penalty,
            root: root.matrix,
            root_inverse,
            shift: root.shift,
            theta_star: Vector::zeros(0),
            theta_star_rotated: Vector::zeros(0),
            tol: *tol,
        };
        let all: Vec<StairPoint> = problem.domain_points();
        let data = problem.labeled(&all)?;
        problem.theta_star = spline_fit(&data, None, &problem)?.theta;
        problem.theta_star_rotated = &problem.root_inverse * &problem.theta_star;
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// The `2s` inputs in domain order `0, ε, 1, 1+ε, …`.
    pub fn domain_points(&self) -> Vec<StairPoint> {
        (0..self.s)
            .flat_map(|stair| [false, true].map(|shifted| StairPoint { stair, shifted }))
            .collect()
    }

    /// Probability of each domain point, in domain order.
    pub fn domain_probs(&self) -> Vec<f64> {
        self.w.iter().flat_map(|&wi| [(1.0 - self.delta) * wi, self.delta * wi]).collect()
    }

    pub fn features(&self, p: StairPoint) -> Result<Vector> {
        self.basis.features(p.t(self.epsilon))
    }

    /// Features and targets `⌊t⌋` for the given inputs.
    pub fn labeled(&self, points: &[StairPoint]) -> Result<LabeledData> {
        let rows = points.iter().map(|&p| self.features(p)).collect::<Result<Vec<_>>>()?;
        let y = Vector::from_iterator(points.len(), points.iter().map(|p| p.stair as f64));
        LabeledData::new(matrix_from_vectors(&rows, self.dim()), y)
    }

    /// Rows `x ↦ R x`, i.e. `X ↦ X R`.
    pub fn rotate(&self, data: &LabeledData) -> LabeledData {
        LabeledData {
            x: &data.x * &self.root,
            y: data.y.clone(),
        }
    }

    /// `Σ_t p(t)(f_θ(t) − ⌊t⌋)²` over the domain.
    pub fn risk(&self, theta: &Vector) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(mismatch(format!("θ has dimension {} but the basis {}", theta.len(), self.dim())));
        }
        let mut total = 0.0;
        for (p, prob) in self.domain_points().into_iter().zip(self.domain_probs()) {
            let f = self.basis.evaluate(theta, p.t(self.epsilon))?;
            total += prob * (f - p.stair as f64).powi(2);
        }
        Ok(total)
    }

    /// Exact population quantities in original and rotated coordinates.
    pub fn population(&self) -> Result<SplinePopulation> {
        let points = self.domain_points();
        let probs = self.domain_probs();
        let sets: Vec<Vec<usize>> = points.iter().map(|p| vec![2 * p.stair, 2 * p.stair + 1]).collect();
        let feats = points.iter().map(|&p| self.features(p)).collect::<Result<Vec<_>>>()?;
        let rotated_feats: Vec<Vector> = feats.iter().map(|x| &self.root * x).collect();
        let domain = DiscreteDomain::new(feats, probs.clone(), sets.clone())?;
        let rotated_domain = DiscreteDomain::new(rotated_feats, probs, sets)?;
        let model = PopulationModel::new(self.theta_star.clone(), domain.covariance())?;
        let rotated_model = PopulationModel::new(self.theta_star_rotated.clone(), rotated_domain.covariance())?;
        Ok(SplinePopulation {
            domain,
            model,
            rotated_domain,
            rotated_model,
        })
    }

    /// Perturbation span `{X(i+ε) − X(i)}` in rotated coordinates.
    pub fn perturbation_span(&self) -> Result<PerturbationSpan> {
        let rows = (0..self.s)
            .map(|stair| {
                let a = self.features(StairPoint { stair, shifted: false })?;
                let b = self.features(StairPoint { stair, shifted: true })?;
                Ok(&self.root * (b - a))
            })
            .collect::<Result<Vec<_>>>()?;
        PerturbationSpan::new(&matrix_from_vectors(&rows, self.dim()), "stair shifts X(i+ε) − X(i)", &self.tol)
    }
}

#[derive(Debug, Clone)]
pub struct SplinePopulation {
    pub domain: DiscreteDomain,
    pub model: PopulationModel,
    /// Domain with features `R·X(t)`.
    pub rotated_domain: DiscreteDomain,
    pub rotated_model: PopulationModel,
}

pub fn population_covariance(problem: &StaircaseProblem) -> Result<SplinePopulation> {
    problem.population()
}

/// Training inputs together with their feature rows.
#[derive(Debug, Clone)]
pub struct StaircaseSample {
    pub points: Vec<StairPoint>,
    pub data: LabeledData,
}

impl StaircaseSample {
    pub fn ts(&self, epsilon: f64) -> Vec<f64> {
        self.points.iter().map(|p| p.t(epsilon)).collect()
    }

    /// Whether every domain point appears.
    pub fn covers_domain(&self, s: usize) -> bool {
        let mut seen = vec![false; 2 * s];
        for p in &self.points {
            seen[p.index()] = true;
        }
        seen.iter().all(|&b| b)
    }
}

/// Draws `i ~ Categorical(w)`, then shifts to `i + ε` with probability δ.
pub fn sample_staircase<R: Rng>(problem: &StaircaseProblem, n: usize, rng: &mut R) -> Result<StaircaseSample> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let stairs = WeightedIndex::new(&problem.w).map_err(|e| invalid(e.to_string()))?;
    let points: Vec<StairPoint> = (0..n)
        .map(|_| StairPoint {
            stair: stairs.sample(rng),
            shifted: rng.random_bool(problem.delta),
        })
        .collect();
    let data = problem.labeled(&points)?;
    Ok(StaircaseSample { points, data })
}

/// One augmentation per training input, uniform over `{⌊t⌋, ⌊t⌋+ε}`, with
/// the original target.
pub fn sample_augmentations<R: Rng>(
    sample: &StaircaseSample,
    problem: &StaircaseProblem,
    rng: &mut R,
) -> Result<StaircaseSample> {
    let points: Vec<StairPoint> = sample
        .points
        .iter()
        .map(|p| StairPoint {
            stair: p.stair,
            shifted: rng.random_bool(0.5),
        })
        .collect();
    let data = problem.labeled(&points)?;
    Ok(StaircaseSample { points, data })
}

/// `Σ_k sqrt(λ_k + shift) q_k q_kᵀ` over the eigenpairs of `m`.
fn shifted_sqrt(m: &DenseMatrix, shift: f64, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let (values, vectors) = sym_eigen(m, tol)?;
    let d = m.nrows();
    let mut out = DenseMatrix::zeros(d, d);
    for (k, &lam) in values.iter().enumerate() {
        let q = vectors.column(k);
        out += (q * (lam.max(0.0) + shift).sqrt()) * q.transpose();
    }
    Ok(out)
}

/// Minimum `θᵀMθ` interpolant of the sample (and optional extra data).
///
/// Solved directly as a constrained quadratic in `M`, without the ridge the
/// rotation `M^{-1/2}` needs: once two distinct stairs are sampled the
/// linear kernel of `M` is pinned down and the minimizer is unique.
pub fn spline_fit(data: &LabeledData, extra: Option<&ExtraData>, problem: &StaircaseProblem) -> Result<Estimator> {
    let system = data.stacked(extra)?;
    if system.dim() != problem.dim() {
        return Err(mismatch("data does not match the spline basis"));
    }
    let d = problem.dim();
    let theta = solve_constrained_quadratic(&problem.penalty, &Vector::zeros(d), &system.x, &system.y, &problem.tol)?;
    let residual = if system.is_empty() { 0.0 } else { (&system.x * &theta - &system.y).amax() };
    Ok(Estimator {
        norm: theta.dot(&(&problem.penalty * &theta)).max(0.0).sqrt(),
        residual,
        theta,
        norm_kind: NormKind::MNorm,
    })
}

/// RST spline fit, solved in rotated coordinates.
#[derive(Debug, Clone)]
pub struct SplineRst {
    pub solution: RSTSolution,
    /// Coefficients in the original B-spline coordinates.
    pub theta: Vector,
}

/// Robust self-training on the staircase: pseudo-labels from the standard
/// spline fit, invariance to every stair shift, exact population Σ.
pub fn rst_spline(data: &LabeledData, problem: &StaircaseProblem, population: &SplinePopulation) -> Result<SplineRst> {
    let rotated = problem.rotate(data);
    let pseudo = &problem.root_inverse * spline_fit(data, None, problem)?.theta;
    let span = problem.perturbation_span()?;
    let solution = build_constraint_basis(
        &pseudo,
        &span,
        &rotated.x,
        &rotated.y,
        &population.rotated_model.sigma,
        &problem.tol,
    )?;
    let theta = &problem.root * &solution.theta;
    Ok(SplineRst { solution, theta })
}

/// No-tradeoff check of an RST spline fit on the staircase domain.
pub fn verify_rst_spline(
    rst: &SplineRst,
    data: &LabeledData,
    problem: &StaircaseProblem,
    population: &SplinePopulation,
) -> Result<RstGuarantees> {
    let rotated = problem.rotate(data);
    verify_rst_guarantees(
        &rst.solution,
        &rotated.x,
        &population.rotated_model,
        &population.rotated_domain,
        &problem.tol,
    )
}

/// Errors of the three estimators on one seeded training set.
#[derive(Debug, Clone)]
pub struct Fig2Trial {
    pub sample: StaircaseSample,
    pub augmentations: StaircaseSample,
    pub std_fit: Estimator,
    pub aug_fit: Estimator,
    pub rst_theta: Vector,
    pub std_error: f64,
    pub aug_error: f64,
    pub rst_error: f64,
    pub guarantees: RstGuarantees,
}

pub fn fig2_trial<R: Rng>(
    problem: &StaircaseProblem,
    population: &SplinePopulation,
    n: usize,
    rng: &mut R,
) -> Result<Fig2Trial> {
    let sample = sample_staircase(problem, n, rng)?;
    let augmentations = sample_augmentations(&sample, problem, rng)?;
    let std_fit = spline_fit(&sample.data, None, problem)?;
    let aug_fit = spline_fit(&sample.data, Some(&augmentations.data), problem)?;
    let rst = rst_spline(&sample.data, problem, population)?;
    let guarantees = verify_rst_spline(&rst, &sample.data, problem, population)?;
    Ok(Fig2Trial {
        std_error: problem.risk(&std_fit.theta)?,
        aug_error: problem.risk(&aug_fit.theta)?,
        rst_error: problem.risk(&rst.theta)?,
        rst_theta: rst.theta,
        sample,
        augmentations,
        std_fit,
        aug_fit,
        guarantees,
    })
}

/// Eigen-structure of the rotated population covariance seen from a
/// training set.
#[derive(Debug, Clone)]
pub struct LocalGlobalProjection {
    /// Eigenvalues of the rotated Σ, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns.
    pub eigvecs: DenseMatrix,
    /// `‖Π_std⊥ q_k‖` for every eigenvector.
    pub null_norms: Vec<f64>,
    /// Orthonormalized rows `Π_std⊥q₃` (global) and `Π_std⊥q_{2s}` (local).
    pub projector: DenseMatrix,
    /// Indices `k` with `λ_k ≈ λ_{k+1}` among the leading `2s`.
    pub degenerate: Vec<usize>,
    /// Rank of the standard rows restricted to Null(M): 2 means the training
    /// set pins down every linear function.
    pub linear_rank: usize,
}

impl LocalGlobalProjection {
    /// `Π_lg x` for a rotated vector.
    pub fn project(&self, x: &Vector) -> [f64; 2] {
        let p = &self.projector * x;
        [p[0], p[1]]
    }
}

pub fn local_global_analysis(problem: &StaircaseProblem, train: &[StairPoint]) -> Result<LocalGlobalProjection> {
    let tol = &problem.tol;
    let population = problem.population()?;
    let sigma = &population.rotated_model.sigma;
    let (eigenvalues, eigvecs) = sym_eigen(sigma, tol)?;
    let data = problem.labeled(train)?;
    let rotated = problem.rotate(&data);
    let null_std = null_projector(&rotated.x, tol)?;
    let null_norms: Vec<f64> = (0..eigvecs.ncols()).map(|k| (&null_std * eigvecs.column(k)).norm()).collect();
    let support = 2 * problem.s;
    let top = eigenvalues[0];
    let degenerate = (0..support - 1)
        .filter(|&k| (eigenvalues[k] - eigenvalues[k + 1]).abs() <= 1e-10 * top)
        .collect();

    let global = &null_std * eigvecs.column(2);
    let local = &null_std * eigvecs.column(support - 1);
    if global.norm() <= tol.eq_abs_tol {
        return Err(LabError::DegenerateDirection("Π_std⊥ q₃ vanishes".into()));
    }
    let g = global.normalize();
    let l = &local - &g * g.dot(&local);
    if l.norm() <= tol.eq_abs_tol {
        return Err(LabError::DegenerateDirection("local direction is parallel to the global one".into()));
    }
    let l = l.normalize();
    let projector = DenseMatrix::from_rows(&[g.transpose(), l.transpose()]);

    let kernel = null_basis(&problem.penalty, tol)?;
    let kernel = if kernel.ncols() == 2 {
        kernel
    } else {
        // The penalty kernel is the linear functions; fall back to its
        // eigenvectors of smallest eigenvalue if the cutoff missed them.
        let (_, vecs) = sym_eigen(&problem.penalty, tol)?;
        vecs.columns(vecs.ncols() - 2, 2).into_owned()
    };
    let linear_rank = rank(&(&data.x * kernel), tol)?;
    Ok(LocalGlobalProjection {
        eigenvalues,
        eigvecs,
        null_norms,
        projector,
        degenerate,
        linear_rank,
    })
}

/// Mean gap `L_std(aug) − L_std(std)` as the training set grows.
///
/// Columns: `n, mean_gap, std_gap, mean_std_error, mean_aug_error,
/// full_support_fraction, max_abs_gap_full_support` (the last is 0 when no
/// trial covered the whole domain).
pub fn sample_size_sweep(problem: &StaircaseProblem, n_list: &[usize], trials: usize, seed: u64) -> Result<ExperimentReport> {
    if n_list.is_empty() || trials == 0 {
        return Err(invalid("need a non-empty n_list and at least one trial"));
    }
    let mut report = ExperimentReport::new(
        "spline-sample-size",
        seed,
        &[
            "n",
            "mean_gap",
            "std_gap",
            "mean_std_error",
            "mean_aug_error",
            "full_support_fraction",
            "max_abs_gap_full_support",
        ],
    );
    for (idx, &n) in n_list.iter().enumerate() {
        let results = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = rng_for(seed, ((idx as u64) << 32) | trial as u64);
                let sample = sample_staircase(problem, n, &mut rng)?;
                let aug = sample_augmentations(&sample, problem, &mut rng)?;
                let std_fit = spline_fit(&sample.data, None, problem)?;
                let aug_fit = spline_fit(&sample.data, Some(&aug.data), problem)?;
                let std_err = problem.risk(&std_fit.theta)?;
                let aug_err = problem.risk(&aug_fit.theta)?;
                Ok((std_err, aug_err, sample.covers_domain(problem.s)))
            })
            .collect::<Result<Vec<_>>>()?;
        let gaps: Vec<f64> = results.iter().map(|(s, a, _)| a - s).collect();
        let (mean_gap, std_gap) = mean_std(&gaps);
        let mean_std_err = results.iter().map(|r| r.0).sum::<f64>() / trials as f64;
        let mean_aug_err = results.iter().map(|r| r.1).sum::<f64>() / trials as f64;
        let full: Vec<f64> = results.iter().filter(|r| r.2).map(|r| (r.1 - r.0).abs()).collect();
        let max_full = full.iter().copied().fold(0.0, f64::max);
        report.push_row(vec![
            n as f64,
            mean_gap,
            std_gap,
            mean_std_err,
            mean_aug_err,
            full.len() as f64 / trials as f64,
            max_full,
        ])?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::domain_standard_error;
    use crate::report::median;

    fn problem(cfg: StaircaseConfig) -> StaircaseProblem {
        StaircaseProblem::new(&cfg, &ToleranceConfig::default()).unwrap()
    }

    #[test]
    fn theta_star_interpolates_the_staircase() {
        let p = problem(StaircaseConfig::default());
        assert_eq!(p.dim(), 22);
        for pt in p.domain_points() {
            let f = p.basis.evaluate(&p.theta_star, pt.t(p.epsilon)).unwrap();
            assert!((f - pt.stair as f64).abs() < 1e-8, "{pt:?}: {f}");
        }
        assert!(p.risk(&p.theta_star).unwrap() < 1e-16);
    }

    #[test]
    fn default_weights_favour_lower_stairs() {
        let w = StaircaseConfig::default().stair_weights().unwrap();
        assert!((w[0] - 0.18).abs() < 1e-15 && (w[9] - 0.02).abs() < 1e-15);
        let u = StaircaseConfig::uniform(6, 0.1, 0.1).stair_weights().unwrap();
        assert!(u.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let bad = StaircaseConfig { epsilon: 0.7, ..Default::default() };
        match StaircaseProblem::new(&bad, &ToleranceConfig::default()) {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "epsilon"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = StaircaseConfig { w: Some(vec![0.5, 0.5]), ..Default::default() };
        assert!(StaircaseProblem::new(&bad, &ToleranceConfig::default()).is_err());
    }

    #[test]
    fn population_two_way_error() {
        let p = problem(StaircaseConfig::default());
        let pop = p.population().unwrap();
        assert!((pop.domain.probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(rank(&pop.model.sigma, &p.tol).unwrap() <= 2 * p.s);
        let mut rng = rng_for(5, 0);
        let sample = sample_staircase(&p, 8, &mut rng).unwrap();
        let fit = spline_fit(&sample.data, None, &p).unwrap();
        let direct = p.risk(&fit.theta).unwrap();
        let via_sigma = crate::estimators::standard_error(&fit.theta, &pop.model).unwrap();
        let via_domain = domain_standard_error(&fit.theta, &pop.model, &pop.domain).unwrap();
        assert!((direct - via_sigma).abs() < 1e-10 * (1.0 + direct));
        assert!((direct - via_domain).abs() < 1e-10 * (1.0 + direct));
        // The rotation leaves predictions unchanged.
        let rot = crate::estimators::standard_error(&(&p.root_inverse * &fit.theta), &pop.rotated_model).unwrap();
        assert!((rot - direct).abs() < 1e-6 * (1.0 + direct));
    }

    #[test]
    fn no_perturbation_keeps_samples_on_the_line() {
        let p = problem(StaircaseConfig { delta: 0.0, ..Default::default() });
        let sample = sample_staircase(&p, 200, &mut rng_for(1, 0)).unwrap();
        assert!(sample.points.iter().all(|q| !q.shifted));
    }

    #[test]
    fn stair_frequencies_match_weights() {
        let p = problem(StaircaseConfig::default());
        let n = 100_000;
        let sample = sample_staircase(&p, n, &mut rng_for(2, 0)).unwrap();
        let mut counts = vec![0usize; p.s];
        for q in &sample.points {
            counts[q.stair] += 1;
        }
        for (c, &w) in counts.iter().zip(&p.w) {
            let sd = (n as f64 * w * (1.0 - w)).sqrt();
            assert!((*c as f64 - n as f64 * w).abs() <= 4.0 * sd);
        }
        let shifted = sample.points.iter().filter(|q| q.shifted).count() as f64;
        assert!((shifted - 0.1 * n as f64).abs() <= 4.0 * (n as f64 * 0.09).sqrt());
        let ts = sample.ts(p.epsilon);
        assert!(ts.iter().all(|&t| (t - t.floor()).abs() < 1e-12 || (t - t.floor() - p.epsilon).abs() < 1e-12));
    }

    #[test]
    fn augmentations_preserve_targets_and_are_balanced() {
        let p = problem(StaircaseConfig::default());
        let mut rng = rng_for(3, 0);
        let sample = sample_staircase(&p, 20_000, &mut rng).unwrap();
        let aug = sample_augmentations(&sample, &p, &mut rng).unwrap();
        assert_eq!(aug.data.y, sample.data.y);
        assert!(aug.points.iter().zip(&sample.points).all(|(a, b)| a.stair == b.stair));
        let shifted = aug.points.iter().filter(|q| q.shifted).count() as f64;
        assert!((shifted - 10_000.0).abs() <= 4.0 * 5_000f64.sqrt());
    }

    #[test]
    fn two_line_points_give_a_linear_fit() {
        let p = problem(StaircaseConfig::default());
        let pts = [StairPoint { stair: 0, shifted: false }, StairPoint { stair: 3, shifted: false }];
        let fit = spline_fit(&p.labeled(&pts).unwrap(), None, &p).unwrap();
        assert!(fit.residual < 1e-8);
        assert!(fit.theta.dot(&(&p.penalty * &fit.theta)) < 1e-8);
        for t in [0.5, 4.2, 8.7] {
            assert!((p.basis.evaluate(&fit.theta, t).unwrap() - t).abs() < 1e-6);
        }
    }

    #[test]
    fn rst_spline_never_loses_to_standard() {
        let p = problem(StaircaseConfig::default());
        let pop = p.population().unwrap();
        for seed in 0..10 {
            let trial = fig2_trial(&p, &pop, 22, &mut rng_for(seed, 0)).unwrap();
            assert!(trial.std_fit.residual < 1e-8 && trial.aug_fit.residual < 1e-8);
            assert!(trial.rst_error <= trial.std_error + 1e-10 * (1.0 + trial.std_error), "seed {seed}");
            let g = trial.guarantees;
            assert!((g.rob_error_rst - g.std_error_rst).abs() <= 1e-8, "seed {seed}: {g:?}");
            assert!((g.std_error_rst - trial.rst_error).abs() <= 1e-8 * (1.0 + trial.rst_error));
        }
    }

    #[test]
    fn figure_two_shape_at_defaults() {
        let p = problem(StaircaseConfig::default());
        let pop = p.population().unwrap();
        let trials: Vec<Fig2Trial> = (0..25).map(|seed| fig2_trial(&p, &pop, 22, &mut rng_for(seed, 0)).unwrap()).collect();
        let med = |f: fn(&Fig2Trial) -> f64| median(&trials.iter().map(f).collect::<Vec<_>>());
        let (s, a, r) = (med(|t| t.std_error), med(|t| t.aug_error), med(|t| t.rst_error));
        assert!(a > s, "aug {a} std {s}");
        assert!(r <= s && r <= a, "rst {r}");
    }

    #[test]
    fn local_global_structure() {
        let p = problem(StaircaseConfig::uniform(10, 0.1, 0.5));
        let train = [StairPoint { stair: 0, shifted: false }, StairPoint { stair: 1, shifted: false }];
        let lg = local_global_analysis(&p, &train).unwrap();
        assert!(lg.eigenvalues.windows(2).all(|w| w[1] <= w[0] + 1e-12 * lg.eigenvalues[0]));
        assert_eq!(lg.linear_rank, 2);
        // The leading eigenvectors are nearly linear functions, which the two
        // training points determine; the residual reflects the PSD shift.
        assert!(lg.null_norms[0] < 0.2 && lg.null_norms[1] < 0.2);
        assert!(lg.null_norms[2] > 0.5);
        let x = p.root.clone() * p.features(StairPoint { stair: 1, shifted: true }).unwrap();
        let [g, l] = lg.project(&x);
        assert!(g.abs() > 1e-6 && l.abs() > 1e-6, "({g}, {l})");
    }

    #[test]
    fn local_global_residual_shrinks_with_the_shift() {
        let train = [StairPoint { stair: 0, shifted: false }, StairPoint { stair: 1, shifted: false }];
        let norm_at = |shift: f64| {
            let tol = ToleranceConfig { psd_shift: shift, ..Default::default() };
            let p = StaircaseProblem::new(&StaircaseConfig::uniform(10, 0.1, 0.5), &tol).unwrap();
            let lg = local_global_analysis(&p, &train).unwrap();
            lg.null_norms[0].max(lg.null_norms[1])
        };
        let coarse = norm_at(1e-10);
        let fine = norm_at(1e-12);
        let ratio = coarse / fine;
        assert!(ratio > 7.0 && ratio < 14.0, "ratio {ratio}: √shift scaling predicts 10");
    }

    #[test]
    fn sweep_is_deterministic_and_shrinks() {
        let p = problem(StaircaseConfig::default());
        let a = sample_size_sweep(&p, &[22, 400], 8, 3).unwrap();
        let b = sample_size_sweep(&p, &[22, 400], 8, 3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let gaps = a.column("mean_gap").unwrap();
        assert!(gaps[1] < gaps[0]);
    }
}
