//! Exact decomposition of the error change caused by augmentation, the
//! sufficient conditions under which augmentation is safe, and a
//! constructive recipe for true parameters where augmentation hurts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, LabError, Result};
use crate::estimators::{min_norm_fit, standard_error, LabeledData, PopulationModel, RegressionInstance};
use crate::linalg::{column_basis, null_projector, rank, svd, sym_eigen, vstack, DenseMatrix, ToleranceConfig, Vector};

/// `L_std(θ̂_std) − L_std(θ̂_aug) = vᵀΣv + 2wᵀΣv` with its two sides.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffDecomposition {
    /// `Π_std⊥ Π_aug θ*`: the part of θ* the extra data recovers.
    pub v: Vector,
    /// `Π_aug⊥ θ*`: the part no estimator sees.
    pub w: Vector,
    pub predicted_diff: f64,
    /// Difference measured from the two fitted estimators.
    pub direct_diff: f64,
    pub std_error: f64,
    pub aug_error: f64,
}

impl TradeoffDecomposition {
    /// `L_std(θ̂_aug) − L_std(θ̂_std)`, positive when augmentation hurts.
    pub fn increase(&self) -> f64 {
        -self.direct_diff
    }
}

fn check_shapes(theta_star: &Vector, x_std: &DenseMatrix, x_ext: &DenseMatrix, sigma: &DenseMatrix) -> Result<()> {
    let d = theta_star.len();
    if x_std.ncols() != d || x_ext.ncols() != d || sigma.shape() != (d, d) {
        return Err(mismatch(format!(
            "θ* has dimension {d}, X_std {:?}, X_ext {:?}, Σ {:?}",
            x_std.shape(),
            x_ext.shape(),
            sigma.shape()
        )));
    }
    Ok(())
}

pub fn decompose(
    theta_star: &Vector,
    x_std: &DenseMatrix,
    x_ext: &DenseMatrix,
    sigma: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<TradeoffDecomposition> {
    check_shapes(theta_star, x_std, x_ext, sigma)?;
    let d = theta_star.len();
    let x_aug = vstack(x_std, x_ext)?;
    let null_std = null_projector(x_std, tol)?;
    let null_aug = null_projector(&x_aug, tol)?;
    let row_aug = DenseMatrix::identity(d, d) - &null_aug;
    let v = &null_std * (row_aug * theta_star);
    let w = &null_aug * theta_star;
    let sv = sigma * &v;
    let predicted_diff = v.dot(&sv) + 2.0 * w.dot(&sv);

    let model = PopulationModel {
        theta_star: theta_star.clone(),
        sigma: sigma.clone(),
    };
    let standard = LabeledData::noiseless(x_std.clone(), theta_star)?;
    let extra = LabeledData::noiseless(x_ext.clone(), theta_star)?;
    let std_fit = min_norm_fit(&standard, None, tol)?;
    let aug_fit = min_norm_fit(&standard, Some(&extra), tol)?;
    let std_error = standard_error(&std_fit.theta, &model)?;
    let aug_error = standard_error(&aug_fit.theta, &model)?;
    Ok(TradeoffDecomposition {
        v,
        w,
        predicted_diff,
        direct_diff: std_error - aug_error,
        std_error,
        aug_error,
    })
}

pub fn decompose_instance(instance: &RegressionInstance, tol: &ToleranceConfig) -> Result<TradeoffDecomposition> {
    decompose(
        &instance.model.theta_star,
        &instance.standard.x,
        &instance.extra.x,
        &instance.model.sigma,
        tol,
    )
}

/// Which sufficient conditions for safe augmentation hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeConditionReport {
    /// `Σ = γI` for some `γ > 0`.
    pub identity_cov: bool,
    /// The augmented rows span the whole space (`Π_aug⊥ = 0`).
    pub aug_spans_space: bool,
    /// One extra row whose null-space part is an eigenvector of Σ.
    pub single_eigvec: bool,
    /// Single-point criterion value; present for one extra row with
    /// non-degenerate denominators.
    pub single_point_value: Option<f64>,
    /// `κ(Σ) ≤ 2` and `Π_std⊥θ*` is an eigenvector of Σ (or zero).
    pub well_conditioned_case: bool,
}

impl SafeConditionReport {
    pub fn any(&self) -> bool {
        self.identity_cov
            || self.aug_spans_space
            || self.single_eigvec
            || self.well_conditioned_case
            || self.single_point_value.is_some_and(|v| v <= 0.0)
    }
}

/// Whether `x` is an eigenvector of `sigma`:
/// `‖Σx − ρx‖ ≤ 1e-8 ‖Σ‖ ‖x‖` with `ρ` the Rayleigh quotient.
pub fn is_eigenvector(sigma: &DenseMatrix, x: &Vector) -> bool {
    let norm = x.norm();
    if norm == 0.0 {
        return false;
    }
    let sx = sigma * x;
    let rho = x.dot(&sx) / x.norm_squared();
    let sigma_norm = sigma.norm();
    (sx - rho * x).norm() <= 1e-8 * sigma_norm * norm
}

fn is_scaled_identity(sigma: &DenseMatrix, tol: &ToleranceConfig) -> bool {
    let d = sigma.nrows();
    if d == 0 {
        return false;
    }
    let gamma = sigma.trace() / d as f64;
    if gamma <= tol.eq_abs_tol {
        return false;
    }
    (sigma - DenseMatrix::identity(d, d) * gamma).amax() <= tol.eq_abs_tol * gamma.max(1.0)
}

pub fn check_safe_conditions(instance: &RegressionInstance, tol: &ToleranceConfig) -> Result<SafeConditionReport> {
    let x_std = &instance.standard.x;
    let x_ext = &instance.extra.x;
    let sigma = &instance.model.sigma;
    let theta_star = &instance.model.theta_star;
    check_shapes(theta_star, x_std, x_ext, sigma)?;
    let d = instance.dim();
    let null_std = null_projector(x_std, tol)?;

    let aug_spans_space = rank(&vstack(x_std, x_ext)?, tol)? == d;

    let (single_eigvec, single_point_value) = if x_ext.nrows() == 1 {
        let x = x_ext.row(0).transpose();
        let x_bar = &null_std * &x;
        let eig = x_bar.norm() > tol.eq_abs_tol * x.norm().max(1.0) && is_eigenvector(sigma, &x_bar);
        let value = single_point_condition(&x, x_std, sigma, theta_star, tol).ok();
        (eig, value)
    } else {
        (false, None)
    };

    let (values, _) = sym_eigen(sigma, tol)?;
    let (lmax, lmin) = (values[0], values[d - 1]);
    let theta_bar = &null_std * theta_star;
    let theta_bar_ok = theta_bar.norm() <= tol.eq_abs_tol * theta_star.norm().max(1.0) || is_eigenvector(sigma, &theta_bar);
    let well_conditioned_case = lmin > 0.0 && lmax <= 2.0 * lmin && theta_bar_ok;

    Ok(SafeConditionReport {
        identity_cov: is_scaled_identity(sigma, tol),
        aug_spans_space,
        single_eigvec,
        single_point_value,
        well_conditioned_case,
    })
}

/// `x̄ᵀΣx̄ / x̄ᵀx̄ − 2 x̄ᵀΣθ̄ / x̄ᵀθ̄` with `x̄ = Π_std⊥x_ext`, `θ̄ = Π_std⊥θ*`.
///
/// The error change from adding `x_ext` equals `(x̄ᵀθ̄)² / ‖x̄‖²` times this
/// value, so a nonpositive value means the point is safe.
pub fn single_point_condition(
    x_ext: &Vector,
    x_std: &DenseMatrix,
    sigma: &DenseMatrix,
    theta_star: &Vector,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let d = theta_star.len();
    if x_ext.len() != d || x_std.ncols() != d || sigma.shape() != (d, d) {
        return Err(mismatch("single-point inputs have inconsistent dimensions"));
    }
    let null_std = null_projector(x_std, tol)?;
    let x_bar = &null_std * x_ext;
    let theta_bar = &null_std * theta_star;
    let xx = x_bar.norm_squared();
    let xt = x_bar.dot(&theta_bar);
    if xx <= 1e-16 * x_ext.norm_squared().max(1e-300) || xx == 0.0 {
        return Err(LabError::DegenerateDirection("x_ext lies in the row space of X_std".into()));
    }
    if xt.abs() <= 1e-12 * xx.sqrt() * theta_bar.norm() || xt == 0.0 {
        return Err(LabError::DegenerateDirection("x_ext is orthogonal to the unseen part of θ*".into()));
    }
    let sx = sigma * &x_bar;
    Ok(x_bar.dot(&sx) / xx - 2.0 * sx.dot(&theta_bar) / xt)
}

/// Exact error increase `L_std(θ̂_aug) − L_std(θ̂_std)` on the canonical
/// 3D instance `X_std = e₃ᵀ`, `X_ext = (e₁+e₂)ᵀ`, `Σ = diag(λ₁, λ₂, ·)`.
pub fn increase_3d(theta_star: &Vector, lambda1: f64, lambda2: f64) -> f64 {
    let (t1, t2) = (theta_star[0], theta_star[1]);
    0.25 * (t1 + t2) * (lambda2 * (t1 - 3.0 * t2) - lambda1 * (3.0 * t1 - t2))
}

/// Whether augmentation increases error on the canonical 3D instance.
///
/// This is the exact sign condition, which carries a `(θ₁+θ₂)` factor; see
/// [`literal_condition_3d`] for the factor-free inequality.
pub fn condition_3d(theta_star: &Vector, lambda1: f64, lambda2: f64) -> bool {
    increase_3d(theta_star, lambda1, lambda2) > 0.0
}

/// `λ₂(θ₁ − 3θ₂) > λ₁(3θ₁ − θ₂)`: agrees with [`condition_3d`] whenever
/// `θ₁ + θ₂ > 0`.
pub fn literal_condition_3d(theta_star: &Vector, lambda1: f64, lambda2: f64) -> bool {
    let (t1, t2) = (theta_star[0], theta_star[1]);
    lambda2 * (t1 - 3.0 * t2) > lambda1 * (3.0 * t1 - t2)
}

/// Unit vectors `(w, v)` with `wᵀv = 0` and `wᵀΣv ≠ 0`, built from the
/// eigenvectors of the smallest and largest nonzero eigenvalues:
/// `v = (uᵢ + uⱼ)/√2`, `w = (uᵢ − uⱼ)/√2`, so `wᵀΣv = (λᵢ − λⱼ)/2`.
pub fn find_wv_pair(sigma: &DenseMatrix, tol: &ToleranceConfig) -> Result<(Vector, Vector)> {
    let (values, vectors) = sym_eigen(sigma, tol)?;
    let lmax = values.first().copied().unwrap_or(0.0);
    let nonzero: Vec<usize> = (0..values.len()).filter(|&k| values[k] > tol.rank_rel_tol * lmax).collect();
    let (Some(&j), Some(&i)) = (nonzero.first(), nonzero.last()) else {
        return Err(LabError::NoPairExists("Σ has no nonzero eigenvalues".into()));
    };
    if values[j] - values[i] <= tol.eq_abs_tol * values[j] {
        return Err(LabError::NoPairExists("all nonzero eigenvalues of Σ are equal".into()));
    }
    let (ui, uj) = (vectors.column(i), vectors.column(j));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(((ui - uj) * s, (ui + uj) * s))
}

/// A true parameter for which augmentation raises standard error by `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialConstruction {
    pub theta_star: Vector,
    pub target_increase: f64,
    /// `‖θ̂_aug‖² − ‖θ̂_std‖²`.
    pub norm_budget: f64,
    pub achieved_increase: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Lower bounds on `‖θ*‖² − ‖θ̂_aug‖²` and `‖θ*‖² − ‖θ̂_std‖²`.
    pub norm_gap_bounds: (f64, f64),
    /// Measured `‖θ*‖² − ‖θ̂_aug‖²` and `‖θ*‖² − ‖θ̂_std‖²`.
    pub norm_gaps: (f64, f64),
}

impl AdversarialConstruction {
    /// Smallest `‖θ*‖² − ‖θ̂_std‖²` over all budgets: `2√((β₁+1)β₂c²)`.
    pub fn minimized_bound(&self) -> f64 {
        2.0 * ((self.beta1 + 1.0) * self.beta2 * self.target_increase.powi(2)).sqrt()
    }
}

/// Builds `θ* = θ_row + Vζ + Wξ` where `V`, `W` are orthonormal bases of
/// `Col(Π_std⊥Π_aug)` and `Col(Π_aug⊥)`, `ζ` is the top right singular vector
/// of `WᵀΣV` scaled to `‖ζ‖² = c1`, and `ξ = −(c₀ + c)/(2‖x‖²)·x` with
/// `x = WᵀΣVζ`, `c₀ = ζᵀVᵀΣVζ`. The row-space part is `θ_row = Π_std 𝟙`.
pub fn construct_adversarial_theta(
    x_std: &DenseMatrix,
    x_ext: &DenseMatrix,
    sigma: &DenseMatrix,
    c: f64,
    c1: f64,
    tol: &ToleranceConfig,
) -> Result<AdversarialConstruction> {
    if !(c > 0.0 && c1 > 0.0 && c.is_finite() && c1.is_finite()) {
        return Err(LabError::InvalidInput(format!("need c > 0 and c1 > 0, got c = {c}, c1 = {c1}")));
    }
    let d = x_std.ncols();
    check_shapes(&Vector::zeros(d), x_std, x_ext, sigma)?;
    let x_aug = vstack(x_std, x_ext)?;
    let null_std = null_projector(x_std, tol)?;
    let null_aug = null_projector(&x_aug, tol)?;
    let eye = DenseMatrix::identity(d, d);
    let v_basis = column_basis(&(&null_std * (&eye - &null_aug)), tol)?;
    let w_basis = column_basis(&null_aug, tol)?;
    if v_basis.ncols() == 0 || w_basis.ncols() == 0 {
        return Err(LabError::ConstructionImpossible(
            "the extra data adds no new direction or leaves no unseen direction".into(),
        ));
    }
    let coupling = w_basis.transpose() * sigma * &v_basis;
    let dec = svd(&coupling)?;
    let sigma_scale = sigma.amax().max(f64::MIN_POSITIVE);
    if dec.sigma_max() <= tol.rank_rel_tol * sigma_scale {
        return Err(LabError::ConstructionImpossible("WᵀΣV vanishes, so every augmentation is safe".into()));
    }
    let mut zeta = dec.v.column(0).into_owned();
    let lead = zeta.iter().copied().fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if lead < 0.0 {
        zeta.neg_mut();
    }
    zeta *= c1.sqrt();
    let x = &coupling * &zeta;
    let v_sigma_v = v_basis.transpose() * sigma * &v_basis;
    let c0 = zeta.dot(&(&v_sigma_v * &zeta));
    let xi = &x * (-(c0 + c) / (2.0 * x.norm_squared()));

    let theta_row = (&eye - &null_std) * Vector::from_element(d, 1.0);
    let theta_star = &theta_row + &v_basis * &zeta + &w_basis * &xi;

    let decomposition = decompose(&theta_star, x_std, x_ext, sigma, tol)?;
    let standard = LabeledData::noiseless(x_std.clone(), &theta_star)?;
    let extra = LabeledData::noiseless(x_ext.clone(), &theta_star)?;
    let std_norm2 = min_norm_fit(&standard, None, tol)?.theta.norm_squared();
    let aug_norm2 = min_norm_fit(&standard, Some(&extra), tol)?.theta.norm_squared();
    let star_norm2 = theta_star.norm_squared();

    let (vsv_values, _) = sym_eigen(&v_sigma_v, tol)?;
    let lambda_min = vsv_values.last().copied().unwrap_or(0.0).max(0.0);
    let smax2 = dec.sigma_max().powi(2);
    let beta1 = lambda_min.powi(2) / (4.0 * smax2);
    let beta2 = 1.0 / (4.0 * smax2);
    let budget = aug_norm2 - std_norm2;
    Ok(AdversarialConstruction {
        target_increase: c,
        norm_budget: budget,
        achieved_increase: decomposition.increase(),
        beta1,
        beta2,
        norm_gap_bounds: (beta1 * c1 + beta2 * c * c / c1, (beta1 + 1.0) * c1 + beta2 * c * c / c1),
        norm_gaps: (star_norm2 - aug_norm2, star_norm2 - std_norm2),
        theta_star,
    })
}

/// Verifies the norm lower bounds of a construction, including the
/// budget-free bound `‖θ*‖² − ‖θ̂_std‖² ≥ 2√((β₁+1)β₂c²)`.
pub fn norm_gap_check(
    construction: &AdversarialConstruction,
    x_std: &DenseMatrix,
    sigma: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<bool> {
    let d = construction.theta_star.len();
    if x_std.ncols() != d || sigma.shape() != (d, d) {
        return Err(mismatch("construction and data dimensions disagree"));
    }
    let standard = LabeledData::noiseless(x_std.clone(), &construction.theta_star)?;
    let std_norm2 = min_norm_fit(&standard, None, tol)?.theta.norm_squared();
    let gap = construction.theta_star.norm_squared() - std_norm2;
    let slack = 1e-9 * (1.0 + gap.abs());
    let (aug_bound, std_bound) = construction.norm_gap_bounds;
    Ok(gap + slack >= construction.minimized_bound()
        && gap + slack >= std_bound
        && construction.norm_gaps.0 + slack >= aug_bound)
}

/// One scanned direction: is adding it as a single extra row safe?
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub direction: Vector,
    pub safe: bool,
    /// `L_std(θ̂_aug) − L_std(θ̂_std)`.
    pub increase: f64,
}

/// Treats each direction as a single extra row and reports whether it is
/// safe. Evaluated in parallel; output order matches `directions`.
pub fn safe_region_scan(
    x_std: &DenseMatrix,
    sigma: &DenseMatrix,
    theta_star: &Vector,
    directions: &[Vector],
    tol: &ToleranceConfig,
) -> Result<Vec<ScanPoint>> {
    directions
        .par_iter()
        .map(|dir| {
            let x_ext = DenseMatrix::from_row_slice(1, dir.len(), dir.as_slice());
            let dec = decompose(theta_star, x_std, &x_ext, sigma, tol)?;
            let increase = dec.increase();
            Ok(ScanPoint {
                direction: dir.clone(),
                safe: increase <= 1e-10 * (1.0 + dec.std_error),
                increase,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gaussian_matrix, gaussian_vector, random_covariance, random_instance, rng_for};
    use proptest::prelude::*;
    use rand::Rng;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn vec(v: &[f64]) -> Vector {
        Vector::from_column_slice(v)
    }

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_slice(1, v.len(), v)
    }

    fn diag(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&vec(v))
    }

    #[test]
    fn canonical_3d_decomposition() {
        let dec = decompose(
            &vec(&[1.0, 0.0, 5.0]),
            &row(&[0.0, 0.0, 1.0]),
            &row(&[1.0, 1.0, 0.0]),
            &diag(&[1.0, 4.0, 1.0]),
            &tol(),
        )
        .unwrap();
        assert!((dec.v.clone() - vec(&[0.5, 0.5, 0.0])).amax() < 1e-12);
        assert!((dec.w.clone() - vec(&[0.5, -0.5, 0.0])).amax() < 1e-12);
        assert!((dec.predicted_diff + 0.25).abs() < 1e-12);
        assert!((dec.direct_diff - (1.0 - 1.25)).abs() < 1e-12);
    }

    #[test]
    fn spanning_extra_data_leaves_no_unseen_part() {
        let mut rng = rng_for(5, 0);
        let x_std = gaussian_matrix(&mut rng, 2, 5);
        let x_ext = gaussian_matrix(&mut rng, 3, 5);
        let sigma = random_covariance(&mut rng, 5, 0.0);
        let dec = decompose(&gaussian_vector(&mut rng, 5), &x_std, &x_ext, &sigma, &tol()).unwrap();
        assert_eq!(dec.w.amax(), 0.0);
        assert!(dec.predicted_diff >= 0.0);
    }

    #[test]
    fn row_space_truth_gives_zero_difference() {
        let mut rng = rng_for(6, 0);
        let x_std = gaussian_matrix(&mut rng, 2, 5);
        let theta_star = x_std.transpose() * gaussian_vector(&mut rng, 2);
        let x_ext = gaussian_matrix(&mut rng, 2, 5);
        let sigma = random_covariance(&mut rng, 5, 0.0);
        let dec = decompose(&theta_star, &x_std, &x_ext, &sigma, &tol()).unwrap();
        assert!(dec.v.amax() < 1e-10 && dec.w.amax() < 1e-10);
        assert!(dec.predicted_diff.abs() < 1e-10 && dec.direct_diff.abs() < 1e-10);
    }

    #[test]
    fn safe_condition_flags() {
        let mut rng = rng_for(7, 0);
        let inst = RegressionInstance::noiseless(
            gaussian_matrix(&mut rng, 2, 4),
            gaussian_matrix(&mut rng, 1, 4),
            gaussian_vector(&mut rng, 4),
            DenseMatrix::identity(4, 4) * 3.0,
        )
        .unwrap();
        let report = check_safe_conditions(&inst, &tol()).unwrap();
        assert!(report.identity_cov);
        assert!(decompose_instance(&inst, &tol()).unwrap().direct_diff >= -1e-10);

        let inst = RegressionInstance::noiseless(
            row(&[0.0, 0.0, 1.0]),
            row(&[1.0, 0.0, 0.0]),
            vec(&[1.0, 2.0, 3.0]),
            diag(&[1.0, 4.0, 1.0]),
        )
        .unwrap();
        let report = check_safe_conditions(&inst, &tol()).unwrap();
        assert!(report.single_eigvec && !report.identity_cov);
        assert!(report.single_point_value.is_some());

        let inst = RegressionInstance::noiseless(
            gaussian_matrix(&mut rng, 2, 4),
            gaussian_matrix(&mut rng, 2, 4),
            gaussian_vector(&mut rng, 4),
            random_covariance(&mut rng, 4, 0.0),
        )
        .unwrap();
        let report = check_safe_conditions(&inst, &tol()).unwrap();
        assert!(report.aug_spans_space && report.single_point_value.is_none());
    }

    #[test]
    fn single_point_examples() {
        let x_std = row(&[0.0, 0.0, 1.0]);
        let sigma = diag(&[2.0, 7.0, 1.0]);
        let theta = vec(&[1.0, 3.0, 5.0]);
        let value = single_point_condition(&vec(&[0.0, 1.0, 4.0]), &x_std, &sigma, &theta, &tol()).unwrap();
        assert!((value + 7.0).abs() < 1e-12);

        let value = single_point_condition(
            &vec(&[0.3, -1.2, 2.0]),
            &x_std,
            &DenseMatrix::identity(3, 3),
            &theta,
            &tol(),
        )
        .unwrap();
        assert!((value + 1.0).abs() < 1e-12);

        let sigma = diag(&[1.0, 4.0, 1.0]);
        let theta = vec(&[1.0, 0.0, 5.0]);
        let x = vec(&[1.0, 1.0, 0.0]);
        let value = single_point_condition(&x, &x_std, &sigma, &theta, &tol()).unwrap();
        let dec = decompose(&theta, &x_std, &row(&[1.0, 1.0, 0.0]), &sigma, &tol()).unwrap();
        assert_eq!(value > 0.0, dec.increase() > 0.0);

        assert!(matches!(
            single_point_condition(&vec(&[0.0, 0.0, 2.0]), &x_std, &sigma, &theta, &tol()),
            Err(LabError::DegenerateDirection(_))
        ));
    }

    #[test]
    fn condition_3d_examples() {
        assert!(condition_3d(&vec(&[1.0, 0.0, 5.0]), 1.0, 4.0));
        assert!((increase_3d(&vec(&[1.0, 0.0, 5.0]), 1.0, 4.0) - 0.25).abs() < 1e-15);
        assert!(!condition_3d(&vec(&[1.0, 1.0, 5.0]), 1.0, 4.0));
        assert!(!literal_condition_3d(&vec(&[1.0, 1.0, 5.0]), 1.0, 4.0));
        // Equal eigenvalues: the null-space direction is an eigenvector, so
        // augmentation never hurts even where the factor-free inequality fires.
        let theta = vec(&[-2.0, 1.0, 0.0]);
        assert!(literal_condition_3d(&theta, 2.0, 2.0));
        assert!(!condition_3d(&theta, 2.0, 2.0));
    }

    #[test]
    fn condition_3d_matches_estimators() {
        let mut rng = rng_for(8, 0);
        for _ in 0..200 {
            let theta = vec(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 1.0]);
            let (l1, l2) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
            let dec = decompose(&theta, &row(&[0.0, 0.0, 1.0]), &row(&[1.0, 1.0, 0.0]), &diag(&[l1, l2, 1.0]), &tol())
                .unwrap();
            assert!((dec.increase() - increase_3d(&theta, l1, l2)).abs() < 1e-10);
        }
    }

    #[test]
    fn wv_pair_examples() {
        let (w, v) = find_wv_pair(&diag(&[1.0, 2.0]), &tol()).unwrap();
        assert!((w[0] + w[1]).abs() < 1e-12);
        assert!((w.dot(&(diag(&[1.0, 2.0]) * &v)) + 0.5).abs() < 1e-12);

        assert!(matches!(
            find_wv_pair(&DenseMatrix::identity(3, 3), &tol()),
            Err(LabError::NoPairExists(_))
        ));

        let sigma = diag(&[1.0, 1.0, 5.0]);
        let (w, v) = find_wv_pair(&sigma, &tol()).unwrap();
        assert!(w.dot(&v).abs() <= 1e-10);
        assert!(w.dot(&(&sigma * &v)).abs() > 1e-6);
        assert!((w.norm() - 1.0).abs() < 1e-12 && (v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn construction_on_canonical_instance() {
        let x_std = row(&[0.0, 0.0, 1.0]);
        let x_ext = row(&[1.0, 1.0, 0.0]);
        let sigma = diag(&[1.0, 4.0, 1.0]);
        let cons = construct_adversarial_theta(&x_std, &x_ext, &sigma, 0.25, 0.5, &tol()).unwrap();
        assert!((cons.achieved_increase - 0.25).abs() < 1e-6);
        assert!((cons.theta_star.clone() - vec(&[1.0, 0.0, 1.0])).amax() < 1e-12);
        assert!((cons.norm_budget - 0.5).abs() < 1e-12);
        assert!(norm_gap_check(&cons, &x_std, &sigma, &tol()).unwrap());

        let err = construct_adversarial_theta(&x_std, &x_ext, &DenseMatrix::identity(3, 3), 1.0, 1.0, &tol());
        assert!(matches!(err, Err(LabError::ConstructionImpossible(_))));
    }

    #[test]
    fn construction_on_random_geometry() {
        let mut rng = rng_for(9, 0);
        let x_std = gaussian_matrix(&mut rng, 2, 6);
        let x_ext = gaussian_matrix(&mut rng, 2, 6);
        let sigma = random_covariance(&mut rng, 6, 0.0);
        let cons = construct_adversarial_theta(&x_std, &x_ext, &sigma, 1.0, 0.7, &tol()).unwrap();
        assert!((cons.achieved_increase - 1.0).abs() < 1e-6);
        assert!(cons.norm_gaps.0 >= cons.norm_gap_bounds.0 - 1e-9);
        assert!(cons.norm_gaps.1 >= cons.norm_gap_bounds.1 - 1e-9);
        assert!(norm_gap_check(&cons, &x_std, &sigma, &tol()).unwrap());
    }

    #[test]
    fn safe_region_examples() {
        let x_std = row(&[0.0, 0.0, 1.0]);
        let theta = vec(&[1.0, 0.3, 5.0]);
        let sigma = diag(&[1.0, 100.0, 1.0]);
        let eig_dirs: Vec<Vector> = (0..3).map(|k| Vector::from_fn(3, |i, _| f64::from(u8::from(i == k)))).collect();
        let scan = safe_region_scan(&x_std, &sigma, &theta, &eig_dirs, &tol()).unwrap();
        assert!(scan.iter().all(|p| p.safe));

        let mut rng = rng_for(10, 0);
        let dirs: Vec<Vector> = (0..100)
            .map(|_| {
                let g = gaussian_vector(&mut rng, 3);
                &g / g.norm()
            })
            .collect();
        let scan = safe_region_scan(&x_std, &DenseMatrix::identity(3, 3), &theta, &dirs, &tol()).unwrap();
        assert!(scan.iter().all(|p| p.safe));
        let scan = safe_region_scan(&x_std, &sigma, &theta, &dirs, &tol()).unwrap();
        assert!(scan.iter().any(|p| !p.safe));
        assert_eq!(scan[17].direction, dirs[17]);
    }

    proptest! {
        #[test]
        fn theorem_identity_and_orthogonality(seed in any::<u64>()) {
            let inst = random_instance(&mut rng_for(seed, 30), 12);
            let dec = decompose_instance(&inst, &tol()).unwrap();
            prop_assert!((dec.predicted_diff - dec.direct_diff).abs() <= 1e-8 * (1.0 + dec.direct_diff.abs()));
            prop_assert!(dec.v.dot(&dec.w).abs() <= 1e-9 * (1.0 + dec.v.norm() * dec.w.norm()));
            let null_std = null_projector(&inst.standard.x, &tol()).unwrap();
            let split = &null_std * &inst.model.theta_star - (&dec.v + &dec.w);
            prop_assert!(split.amax() < 1e-9 * (1.0 + inst.model.theta_star.amax()));
        }

        #[test]
        fn flagged_conditions_are_safe(seed in any::<u64>()) {
            let inst = random_instance(&mut rng_for(seed, 31), 10);
            let report = check_safe_conditions(&inst, &tol()).unwrap();
            let dec = decompose_instance(&inst, &tol()).unwrap();
            if report.any() {
                prop_assert!(dec.direct_diff >= -1e-10 * (1.0 + dec.std_error));
            }
        }

        #[test]
        fn single_point_sign_matches(seed in any::<u64>()) {
            let mut rng = rng_for(seed, 32);
            let d = rng.random_range(2..10);
            let n = rng.random_range(1..d);
            let x_std = gaussian_matrix(&mut rng, n, d);
            let x = gaussian_vector(&mut rng, d);
            let sigma = random_covariance(&mut rng, d, 0.2);
            let theta = gaussian_vector(&mut rng, d);
            let value = single_point_condition(&x, &x_std, &sigma, &theta, &tol()).unwrap();
            let x_ext = DenseMatrix::from_row_slice(1, d, x.as_slice());
            let dec = decompose(&theta, &x_std, &x_ext, &sigma, &tol()).unwrap();
            if value.abs() > 1e-8 && dec.increase().abs() > 1e-10 {
                prop_assert_eq!(value > 0.0, dec.increase() > 0.0);
            }
        }

        #[test]
        fn error_change_scales_quadratically(seed in any::<u64>(), t in 0.1f64..10.0) {
            let inst = random_instance(&mut rng_for(seed, 33), 8);
            let base = decompose_instance(&inst, &tol()).unwrap();
            let scaled_theta = &inst.model.theta_star * t;
            let scaled = decompose(&scaled_theta, &inst.standard.x, &inst.extra.x, &inst.model.sigma, &tol()).unwrap();
            prop_assert!((scaled.direct_diff - t * t * base.direct_diff).abs() <= 1e-8 * (1.0 + t * t * base.direct_diff.abs()));
            if base.direct_diff.abs() > 1e-8 {
                prop_assert_eq!(scaled.direct_diff > 0.0, base.direct_diff > 0.0);
            }
        }
    }
}
