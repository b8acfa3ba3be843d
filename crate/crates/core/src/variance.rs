//! Variance of minimum-norm interpolants under target noise: the
//! pseudo-inverse of `Σ_std + X_extᵀX_ext`, the variance increase and
//! reduction terms, and a Monte-Carlo check.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, LabError, Result};
use crate::instances::rng_for;
use crate::linalg::{ensure_finite, is_symmetric, null_projector, pinv, pinv_scaled, vstack, DenseMatrix, ToleranceConfig, Vector};

/// Variance terms of `V(θ̂_aug) − V(θ̂_std) = σ²(t1 − t2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Increase from extra rows outside the row space of `X_std`.
    pub t1: f64,
    /// Reduction from extra rows inside it.
    pub t2: f64,
    pub predicted_diff: f64,
    /// `σ²·tr(Σ_aug⁺Σ) − σ²·tr(Σ_std⁺Σ)` from direct pseudo-inverses.
    pub direct_diff: f64,
    pub sigma_noise: f64,
}

/// Pieces of `(Σ_std + XᵀX)⁺ = E J Eᵀ + X̄⁺X̄⁺ᵀ`, where `X̄ = XΠ_std⊥`,
/// `E = I − X̄⁺X` and `J` is the Woodbury-type correction restricted to the
/// part of `X` that `X̄` does not already absorb.
struct KovanicParts {
    /// `E J Eᵀ`
    row_part: DenseMatrix,
    /// `X̄⁺X̄⁺ᵀ`
    null_part: DenseMatrix,
}

fn kovanic_parts(sigma_std: &DenseMatrix, x_ext: &DenseMatrix, tol: &ToleranceConfig) -> Result<KovanicParts> {
    let d = sigma_std.nrows();
    if sigma_std.ncols() != d || x_ext.ncols() != d {
        return Err(mismatch(format!("Σ_std is {:?} but X_ext is {:?}", sigma_std.shape(), x_ext.shape())));
    }
    ensure_finite(sigma_std, "Σ_std")?;
    ensure_finite(x_ext, "X_ext")?;
    if !is_symmetric(sigma_std, tol.eq_abs_tol) {
        return Err(invalid("Σ_std is not symmetric"));
    }
    let m = x_ext.nrows();
    let sigma_pinv = pinv(sigma_std, tol)?;
    if m == 0 {
        return Ok(KovanicParts {
            row_part: sigma_pinv,
            null_part: DenseMatrix::zeros(d, d),
        });
    }
    let x_bar = x_ext * null_projector(sigma_std, tol)?;
    let scale = x_ext.norm().max(f64::MIN_POSITIVE);
    let x_bar_pinv = pinv_scaled(&x_bar, scale, tol)?;
    let e = DenseMatrix::identity(d, d) - &x_bar_pinv * x_ext;
    let q = DenseMatrix::identity(m, m) - &x_bar * &x_bar_pinv;
    let qx = &q * x_ext;
    let inner = DenseMatrix::identity(m, m) + &qx * &sigma_pinv * qx.transpose();
    let inner_inv = inner
        .cholesky()
        .ok_or_else(|| LabError::NumericFailure("I + QXΣ⁺XᵀQ is not positive definite".into()))?
        .inverse();
    let sx = &sigma_pinv * qx.transpose();
    let j = &sigma_pinv - &sx * inner_inv * sx.transpose();
    let row_part = &e * j * e.transpose();
    let null_part = &x_bar_pinv * x_bar_pinv.transpose();
    Ok(KovanicParts {
        row_part: symmetrize(row_part),
        null_part: symmetrize(null_part),
    })
}

fn symmetrize(a: DenseMatrix) -> DenseMatrix {
    (&a + a.transpose()) * 0.5
}

/// `(Σ_std + X_extᵀX_ext)⁺` assembled from `Σ_std⁺` and the extra rows
/// without inverting the sum directly.
///
/// When the extra rows lie wholly in the row space of `Σ_std` or wholly in
/// its null space this is the classic
/// `Σ⁺ − Σ⁺Xᵀ(I + XΣ⁺Xᵀ)⁻¹XΣ⁺ + X̄⁺X̄⁺ᵀ`; mixed rows need the extra
/// `E`/`Q` projections to stay exact.
pub fn kovanic_pinv_sum(sigma_std: &DenseMatrix, x_ext: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let parts = kovanic_parts(sigma_std, x_ext, tol)?;
    Ok(parts.row_part + parts.null_part)
}

fn trace_product(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Split of the variance change caused by adding `x_ext` to `x_std`, with
/// population covariance `sigma` and target noise standard deviation
/// `sigma_noise`.
pub fn variance_difference(
    sigma: &DenseMatrix,
    x_std: &DenseMatrix,
    x_ext: &DenseMatrix,
    sigma_noise: f64,
    tol: &ToleranceConfig,
) -> Result<VarianceReport> {
    let d = sigma.nrows();
    if sigma.ncols() != d || x_std.ncols() != d || x_ext.ncols() != d {
        return Err(mismatch(format!(
            "Σ is {:?}, X_std {:?}, X_ext {:?}",
            sigma.shape(),
            x_std.shape(),
            x_ext.shape()
        )));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(invalid(format!("noise level {sigma_noise} must be finite and nonnegative")));
    }
    ensure_finite(sigma, "Σ")?;
    ensure_finite(x_std, "X_std")?;
    let sigma_std = x_std.transpose() * x_std;
    let parts = kovanic_parts(&sigma_std, x_ext, tol)?;
    let std_pinv = pinv(&sigma_std, tol)?;
    let t1 = trace_product(sigma, &parts.null_part);
    let t2 = trace_product(sigma, &(&std_pinv - &parts.row_part));

    let x_aug = vstack(x_std, x_ext)?;
    let aug_pinv = pinv(&(x_aug.transpose() * &x_aug), tol)?;
    let var = sigma_noise * sigma_noise;
    let direct_diff = var * (trace_product(sigma, &aug_pinv) - trace_product(sigma, &std_pinv));
    Ok(VarianceReport {
        t1,
        t2,
        predicted_diff: var * (t1 - t2),
        direct_diff,
        sigma_noise,
    })
}

/// `(σ²·tr(Σ_std⁺Σ), σ²·tr(Σ_aug⁺Σ))`, the exact variances when every
/// target carries noise.
pub fn analytic_variances(
    sigma: &DenseMatrix,
    x_std: &DenseMatrix,
    x_ext: &DenseMatrix,
    sigma_noise: f64,
    tol: &ToleranceConfig,
) -> Result<(f64, f64)> {
    let x_aug = vstack(x_std, x_ext)?;
    let var = sigma_noise * sigma_noise;
    let v_std = trace_product(sigma, &pinv(&(x_std.transpose() * x_std), tol)?);
    let v_aug = trace_product(sigma, &pinv(&(x_aug.transpose() * &x_aug), tol)?);
    Ok((var * v_std, var * v_aug))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloOptions {
    pub trials: usize,
    pub seed: u64,
    /// Add noise to the extra targets as well as the standard ones.
    pub noisy_extra: bool,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 0,
            noisy_extra: true,
        }
    }
}

/// Empirical variances `mean (θ̂ − θ̄)ᵀΣ(θ̂ − θ̄)` and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloVariance {
    pub v_std: f64,
    pub v_aug: f64,
    pub se_std: f64,
    pub se_aug: f64,
    pub trials: usize,
}

fn weighted_spread(samples: &[Vector], sigma: &DenseMatrix) -> (f64, f64) {
    let n = samples.len();
    let d = sigma.nrows();
    let mut mean = Vector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let q: Vec<f64> = samples
        .iter()
        .map(|s| {
            let c = s - &mean;
            c.dot(&(sigma * &c))
        })
        .collect();
    let avg = q.iter().sum::<f64>() / n as f64;
    let spread = if n > 1 {
        (q.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    (avg, spread)
}

/// Refits both estimators on `trials` independent noisy copies of the
/// targets. Trial `k` draws from stream `k` of the seed, so the result does
/// not depend on the thread count.
pub fn monte_carlo_variance(
    x_std: &DenseMatrix,
    x_ext: &DenseMatrix,
    sigma: &DenseMatrix,
    theta_star: &Vector,
    sigma_noise: f64,
    opts: &MonteCarloOptions,
    tol: &ToleranceConfig,
) -> Result<MonteCarloVariance> {
    if opts.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let d = theta_star.len();
    if x_std.ncols() != d || x_ext.ncols() != d || sigma.shape() != (d, d) {
        return Err(mismatch("θ*, X_std, X_ext and Σ dimensions disagree"));
    }
    if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
        return Err(invalid(format!("noise level {sigma_noise} must be finite and nonnegative")));
    }
    if sigma_noise == 0.0 {
        return Ok(MonteCarloVariance {
            v_std: 0.0,
            v_aug: 0.0,
            se_std: 0.0,
            se_aug: 0.0,
            trials: opts.trials,
        });
    }
    let n = x_std.nrows();
    let x_aug = vstack(x_std, x_ext)?;
    let std_map = pinv(x_std, tol)?;
    let aug_map = pinv(&x_aug, tol)?;
    let clean = &x_aug * theta_star;

    let fits: Vec<(Vector, Vector)> = (0..opts.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(opts.seed, k as u64);
            let mut y = clean.clone();
            for (i, yi) in y.iter_mut().enumerate() {
                if i < n || opts.noisy_extra {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *yi += sigma_noise * z;
                }
            }
            let y_std = y.rows(0, n).into_owned();
            (&std_map * y_std, &aug_map * y)
        })
        .collect();
    let (std_fits, aug_fits): (Vec<Vector>, Vec<Vector>) = fits.into_iter().unzip();
    let (v_std, se_std) = weighted_spread(&std_fits, sigma);
    let (v_aug, se_aug) = weighted_spread(&aug_fits, sigma);
    Ok(MonteCarloVariance {
        v_std,
        v_aug,
        se_std,
        se_aug,
        trials: opts.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gaussian_matrix, random_covariance, random_extra, ExtraRegime};
    use proptest::prelude::*;
    use rand::Rng;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn row(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_slice(1, v.len(), v)
    }

    fn diag(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&Vector::from_column_slice(v))
    }

    fn direct(sigma_std: &DenseMatrix, x_ext: &DenseMatrix) -> DenseMatrix {
        pinv(&(sigma_std + x_ext.transpose() * x_ext), &tol()).unwrap()
    }

    #[test]
    fn kovanic_on_canonical_example() {
        let got = kovanic_pinv_sum(&diag(&[0.0, 0.0, 1.0]), &row(&[1.0, 1.0, 0.0]), &tol()).unwrap();
        let want = DenseMatrix::from_row_slice(3, 3, &[0.25, 0.25, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0, 1.0]);
        assert!((&got - &want).amax() < 1e-12);
        assert!((&got - direct(&diag(&[0.0, 0.0, 1.0]), &row(&[1.0, 1.0, 0.0]))).amax() < 1e-12);
    }

    #[test]
    fn kovanic_without_extra_rows_is_plain_pinv() {
        let s = diag(&[2.0, 0.0, 1.0]);
        let zero = DenseMatrix::zeros(2, 3);
        let got = kovanic_pinv_sum(&s, &zero, &tol()).unwrap();
        assert!((&got - pinv(&s, &tol()).unwrap()).amax() < 1e-14);
        let empty = DenseMatrix::zeros(0, 3);
        assert!((kovanic_pinv_sum(&s, &empty, &tol()).unwrap() - pinv(&s, &tol()).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn kovanic_matches_direct_on_seeded_instances() {
        for seed in 0..200u64 {
            let mut rng = rng_for(seed, 11);
            let d = rng.random_range(2..=15);
            let n = rng.random_range(1..=d);
            let m = rng.random_range(1..=d);
            let x_std = gaussian_matrix(&mut rng, n, d);
            let regime = [ExtraRegime::Generic, ExtraRegime::RowSpace, ExtraRegime::NullSpace, ExtraRegime::Mixed]
                [rng.random_range(0..4)];
            let x_ext = random_extra(&mut rng, &x_std, m, regime);
            let s = x_std.transpose() * &x_std;
            let got = kovanic_pinv_sum(&s, &x_ext, &tol()).unwrap();
            let want = direct(&s, &x_ext);
            let err = (&got - &want).norm() / (1.0 + want.norm());
            assert!(err < 1e-8, "seed {seed} d {d} {regime:?}: {err:.3e}");
        }
    }

    #[test]
    fn canonical_variance_terms() {
        let rep = variance_difference(
            &diag(&[1.0, 4.0, 1.0]),
            &row(&[0.0, 0.0, 1.0]),
            &row(&[1.0, 1.0, 0.0]),
            1.0,
            &tol(),
        )
        .unwrap();
        assert!((rep.t1 - 1.25).abs() < 1e-12);
        assert!(rep.t2.abs() < 1e-12);
        assert!((rep.predicted_diff - 1.25).abs() < 1e-12);
        assert!((rep.direct_diff - 1.25).abs() < 1e-12);
    }

    #[test]
    fn pure_regimes_have_one_sided_differences() {
        for seed in 0..30u64 {
            let mut rng = rng_for(seed, 12);
            let d = rng.random_range(3..=10);
            let n = rng.random_range(1..d);
            let x_std = gaussian_matrix(&mut rng, n, d);
            let sigma = random_covariance(&mut rng, d, 0.0);
            let null_rows = random_extra(&mut rng, &x_std, 2, ExtraRegime::NullSpace);
            let rep = variance_difference(&sigma, &x_std, &null_rows, 1.0, &tol()).unwrap();
            assert!(rep.t2.abs() < 1e-9, "seed {seed}: T2 = {}", rep.t2);
            assert!(rep.t1 >= -1e-10 && rep.direct_diff >= -1e-9);

            let row_rows = random_extra(&mut rng, &x_std, 2, ExtraRegime::RowSpace);
            let rep = variance_difference(&sigma, &x_std, &row_rows, 1.0, &tol()).unwrap();
            assert!(rep.t1.abs() < 1e-9, "seed {seed}: T1 = {}", rep.t1);
            assert!(rep.t2 >= -1e-10 && rep.direct_diff <= 1e-9);
        }
    }

    #[test]
    fn zero_noise_gives_zero_variance() {
        let mc = monte_carlo_variance(
            &row(&[0.0, 0.0, 1.0]),
            &row(&[1.0, 1.0, 0.0]),
            &diag(&[1.0, 4.0, 1.0]),
            &Vector::from_column_slice(&[1.0, 0.0, 5.0]),
            0.0,
            &MonteCarloOptions { trials: 50, ..Default::default() },
            &tol(),
        )
        .unwrap();
        assert_eq!((mc.v_std, mc.v_aug), (0.0, 0.0));
    }

    #[test]
    fn monte_carlo_is_seed_deterministic_and_converges() {
        let mut rng = rng_for(4, 13);
        let x_std = gaussian_matrix(&mut rng, 3, 6);
        let x_ext = random_extra(&mut rng, &x_std, 2, ExtraRegime::Mixed);
        let sigma = random_covariance(&mut rng, 6, 0.0);
        let theta = Vector::from_element(6, 1.0);
        let run = |trials| {
            let opts = MonteCarloOptions { trials, seed: 9, noisy_extra: true };
            monte_carlo_variance(&x_std, &x_ext, &sigma, &theta, 0.5, &opts, &tol()).unwrap()
        };
        let a = run(4000);
        assert_eq!(a, run(4000));
        let b = run(8000);
        // The 2N estimate shares the first N trials, so the gap has sd SE_N/√2.
        let z = 2.576 / 2f64.sqrt();
        assert!((a.v_std - b.v_std).abs() <= z * a.se_std * 1.5);
        assert!((a.v_aug - b.v_aug).abs() <= z * a.se_aug * 1.5);
        let (v_std, v_aug) = analytic_variances(&sigma, &x_std, &x_ext, 0.5, &tol()).unwrap();
        assert!((b.v_std - v_std).abs() < 4.0 * b.se_std);
        assert!((b.v_aug - v_aug).abs() < 4.0 * b.se_aug);
    }

    #[test]
    fn noiseless_extra_targets_change_the_augmented_variance() {
        let x_std = row(&[0.0, 0.0, 1.0]);
        let x_ext = DenseMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let sigma = diag(&[1.0, 4.0, 1.0]);
        let theta = Vector::from_column_slice(&[1.0, 0.0, 5.0]);
        let opts = MonteCarloOptions { trials: 4000, seed: 1, noisy_extra: false };
        let mc = monte_carlo_variance(&x_std, &x_ext, &sigma, &theta, 1.0, &opts, &tol()).unwrap();
        // Only the standard target is noisy; the duplicate row halves its weight.
        assert!((mc.v_aug - 0.25).abs() < 4.0 * mc.se_aug);
        assert!((mc.v_std - 1.0).abs() < 4.0 * mc.se_std);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn predicted_matches_direct(seed in 0u64..10_000, noise in 0.1f64..3.0) {
            let mut rng = rng_for(seed, 14);
            let d = rng.random_range(2..=10);
            let n = rng.random_range(1..=d);
            let m = rng.random_range(1..=d);
            let x_std = gaussian_matrix(&mut rng, n, d);
            let x_ext = random_extra(&mut rng, &x_std, m, ExtraRegime::Generic);
            let sigma = random_covariance(&mut rng, d, 0.2);
            let rep = variance_difference(&sigma, &x_std, &x_ext, noise, &tol()).unwrap();
            prop_assert!((rep.predicted_diff - rep.direct_diff).abs() <= 1e-8 * (1.0 + rep.direct_diff.abs()));
            prop_assert!(rep.t1 >= -1e-10);
        }
    }
}
