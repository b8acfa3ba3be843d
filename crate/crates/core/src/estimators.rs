//! Minimum-norm interpolants and the standard / robust error functionals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, LabError, Result};
use crate::linalg::{
    consistent_solve, ensure_finite, ensure_finite_vec, is_symmetric, matrix_from_vectors, sym_eigen,
    sym_root_inv, vconcat, vstack, DenseMatrix, ToleranceConfig, Vector,
};
use crate::lp;

/// A measurement matrix with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub x: DenseMatrix,
    pub y: Vector,
}

/// Extra (perturbed) training points; same shape contract as [`LabeledData`].
pub type ExtraData = LabeledData;

impl LabeledData {
    pub fn new(x: DenseMatrix, y: Vector) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(mismatch(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        ensure_finite(&x, "X")?;
        ensure_finite_vec(&y, "y")?;
        Ok(Self { x, y })
    }

    /// Targets generated without noise from `theta`.
    pub fn noiseless(x: DenseMatrix, theta: &Vector) -> Result<Self> {
        if x.ncols() != theta.len() {
            return Err(mismatch(format!("{} columns but parameter of dimension {}", x.ncols(), theta.len())));
        }
        let y = &x * theta;
        Self::new(x, y)
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stacked(&self, other: Option<&LabeledData>) -> Result<LabeledData> {
        match other {
            None => Ok(self.clone()),
            Some(o) => Ok(LabeledData {
                x: vstack(&self.x, &o.x)?,
                y: vconcat(&self.y, &o.y),
            }),
        }
    }
}

/// True parameter and population covariance of the linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub theta_star: Vector,
    pub sigma: DenseMatrix,
}

impl PopulationModel {
    pub fn new(theta_star: Vector, sigma: DenseMatrix) -> Result<Self> {
        let d = theta_star.len();
        if sigma.shape() != (d, d) {
            return Err(mismatch(format!("Σ is {:?} but θ* has dimension {d}", sigma.shape())));
        }
        ensure_finite_vec(&theta_star, "θ*")?;
        ensure_finite(&sigma, "Σ")?;
        let tol = ToleranceConfig::default();
        if !is_symmetric(&sigma, tol.eq_abs_tol) {
            return Err(invalid("Σ is not symmetric"));
        }
        let (values, _) = sym_eigen(&sigma, &tol)?;
        let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
        if values.last().copied().unwrap_or(0.0) < -tol.eq_abs_tol * scale {
            return Err(invalid("Σ is not positive semi-definite"));
        }
        Ok(Self { theta_star, sigma })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }
}

/// Finite input distribution with consistent perturbation sets `T(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDomain {
    pub points: Vec<Vector>,
    pub probs: Vec<f64>,
    /// `perturbation_sets[i]` lists the indices of the points in `T(points[i])`.
    pub perturbation_sets: Vec<Vec<usize>>,
}

impl DiscreteDomain {
    pub fn new(points: Vec<Vector>, probs: Vec<f64>, perturbation_sets: Vec<Vec<usize>>) -> Result<Self> {
        let k = points.len();
        if probs.len() != k || perturbation_sets.len() != k {
            return Err(mismatch(format!(
                "{k} points, {} probabilities, {} perturbation sets",
                probs.len(),
                perturbation_sets.len()
            )));
        }
        if let Some(first) = points.first() {
            if points.iter().any(|p| p.len() != first.len()) {
                return Err(mismatch("domain points have different dimensions"));
            }
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}")));
        }
        if perturbation_sets.iter().flatten().any(|&j| j >= k) {
            return Err(invalid("perturbation index out of range"));
        }
        Ok(Self { points, probs, perturbation_sets })
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Population covariance `Σ pᵢ xᵢxᵢᵀ`.
    pub fn covariance(&self) -> DenseMatrix {
        let d = self.dim();
        let mut sigma = DenseMatrix::zeros(d, d);
        for (x, &p) in self.points.iter().zip(&self.probs) {
            sigma += p * x * x.transpose();
        }
        sigma
    }

    /// Differences `x' − x` over all perturbation pairs, as rows.
    pub fn perturbation_differences(&self) -> DenseMatrix {
        let rows: Vec<Vector> = self
            .perturbation_sets
            .iter()
            .enumerate()
            .flat_map(|(i, set)| set.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
            .map(|(i, j)| &self.points[j] - &self.points[i])
            .collect();
        matrix_from_vectors(&rows, self.dim())
    }
}

/// One regression experiment: standard data, extra data and the population.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInstance {
    pub standard: LabeledData,
    pub extra: ExtraData,
    pub model: PopulationModel,
}

impl RegressionInstance {
    /// Builds an instance whose targets are exact: `y = Xθ*`.
    pub fn noiseless(x_std: DenseMatrix, x_ext: DenseMatrix, theta_star: Vector, sigma: DenseMatrix) -> Result<Self> {
        let standard = LabeledData::noiseless(x_std, &theta_star)?;
        let extra = LabeledData::noiseless(x_ext, &theta_star)?;
        let model = PopulationModel::new(theta_star, sigma)?;
        Ok(Self { standard, extra, model })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    MNorm,
    L1,
}

/// A fitted interpolant with its fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub theta: Vector,
    pub norm_kind: NormKind,
    /// Largest absolute interpolation residual on the training system.
    pub residual: f64,
    /// Norm of `theta` in the estimator's own geometry.
    pub norm: f64,
}

fn residual(system: &LabeledData, theta: &Vector) -> f64 {
    if system.is_empty() {
        0.0
    } else {
        (&system.x * theta - &system.y).amax()
    }
}

/// Minimum-Euclidean-norm interpolant `A⁺b` of the stacked system.
pub fn min_norm_fit(data: &LabeledData, extra: Option<&ExtraData>, tol: &ToleranceConfig) -> Result<Estimator> {
    let system = data.stacked(extra)?;
    let theta = if system.is_empty() {
        Vector::zeros(system.dim())
    } else {
        consistent_solve(&system.x, &system.y, tol)?
    };
    Ok(Estimator {
        residual: residual(&system, &theta),
        norm: theta.norm(),
        theta,
        norm_kind: NormKind::Euclidean,
    })
}

/// Minimum `θᵀMθ` interpolant, given a precomputed `R = M^{-1/2}`.
pub fn m_norm_fit_with_root(
    data: &LabeledData,
    extra: Option<&ExtraData>,
    m: &DenseMatrix,
    root_inv: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<Estimator> {
    let system = data.stacked(extra)?;
    if root_inv.shape() != (system.dim(), system.dim()) || m.shape() != root_inv.shape() {
        return Err(mismatch("M does not match the feature dimension"));
    }
    let rotated = LabeledData {
        x: &system.x * root_inv,
        y: system.y.clone(),
    };
    let inner = min_norm_fit(&rotated, None, tol)?;
    let theta = root_inv * inner.theta;
    Ok(Estimator {
        residual: residual(&system, &theta),
        norm: theta.dot(&(m * &theta)).max(0.0).sqrt(),
        theta,
        norm_kind: NormKind::MNorm,
    })
}

/// Minimum `θᵀMθ` interpolant via the rotation `x ← M^{-1/2}x`.
pub fn m_norm_fit(
    data: &LabeledData,
    extra: Option<&ExtraData>,
    m: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<Estimator> {
    let root = sym_root_inv(m, tol)?;
    m_norm_fit_with_root(data, extra, m, &root.matrix, tol)
}

fn l1_program(system: &LabeledData) -> (Vec<f64>, DenseMatrix, Vec<f64>) {
    let (n, d) = system.x.shape();
    let a = DenseMatrix::from_fn(n, 2 * d, |i, j| if j < d { system.x[(i, j)] } else { -system.x[(i, j - d)] });
    (vec![1.0; 2 * d], a, system.y.iter().copied().collect())
}

/// Minimum-ℓ1-norm interpolant by linear programming over `θ = u − v`.
/// Among tied optima, Bland's rule fixes the returned vertex.
pub fn l1_fit(data: &LabeledData, extra: Option<&ExtraData>, tol: &ToleranceConfig) -> Result<Estimator> {
    let system = data.stacked(extra)?;
    let d = system.dim();
    let (c, a, b) = l1_program(&system);
    let sol = lp::solve_standard_form(&c, &a, &b)?;
    let theta = Vector::from_fn(d, |j, _| sol.x[j] - sol.x[j + d]);
    let res = residual(&system, &theta);
    let allowed = tol.eq_abs_tol * system.y.amax().max(1.0);
    if res > allowed {
        return Err(LabError::Infeasible { residual: res, tol: allowed });
    }
    Ok(Estimator {
        residual: res,
        norm: theta.lp_norm(1),
        theta,
        norm_kind: NormKind::L1,
    })
}

/// Optimal ℓ1 value by vertex enumeration; an independent check of
/// [`l1_fit`] for small dimensions.
pub fn l1_value_by_enumeration(data: &LabeledData, extra: Option<&ExtraData>) -> Result<f64> {
    let system = data.stacked(extra)?;
    let (c, a, b) = l1_program(&system);
    Ok(lp::brute_force_min(&c, &a, &b)?.objective)
}

/// `(θ − θ*)ᵀ Σ (θ − θ*)`.
pub fn standard_error(theta: &Vector, model: &PopulationModel) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(mismatch(format!("θ has dimension {} but the model {}", theta.len(), model.dim())));
    }
    let diff = theta - &model.theta_star;
    Ok(diff.dot(&(&model.sigma * &diff)).max(0.0))
}

fn check_domain(theta: &Vector, model: &PopulationModel, domain: &DiscreteDomain) -> Result<()> {
    if theta.len() != model.dim() || domain.dim() != model.dim() {
        return Err(mismatch("θ, model and domain dimensions disagree"));
    }
    Ok(())
}

/// `Σᵢ pᵢ (xᵢᵀθ − xᵢᵀθ*)²` over the domain support.
pub fn domain_standard_error(theta: &Vector, model: &PopulationModel, domain: &DiscreteDomain) -> Result<f64> {
    check_domain(theta, model, domain)?;
    Ok(domain
        .points
        .iter()
        .zip(&domain.probs)
        .map(|(x, &p)| p * (x.dot(theta) - x.dot(&model.theta_star)).powi(2))
        .sum())
}

/// `Σᵢ pᵢ max_{x' ∈ T(xᵢ)} (x'ᵀθ − xᵢᵀθ*)²` by exact enumeration.
/// An empty perturbation set is read as `T(x) = {x}`.
pub fn robust_error_discrete(theta: &Vector, model: &PopulationModel, domain: &DiscreteDomain) -> Result<f64> {
    check_domain(theta, model, domain)?;
    let mut total = 0.0;
    for (i, (x, &p)) in domain.points.iter().zip(&domain.probs).enumerate() {
        let target = x.dot(&model.theta_star);
        let set = &domain.perturbation_sets[i];
        let worst = if set.is_empty() {
            (x.dot(theta) - target).powi(2)
        } else {
            set.iter()
                .map(|&j| (domain.points[j].dot(theta) - target).powi(2))
                .fold(0.0, f64::max)
        };
        total += p * worst;
    }
    Ok(total)
}
