//! Seeded random generators for matrices and regression instances.
//!
//! Every generator takes an explicit RNG. [`rng_for`] derives independent
//! ChaCha streams from a master seed so parallel loops stay reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::estimators::RegressionInstance;
use crate::linalg::{column_basis, null_basis, DenseMatrix, ToleranceConfig, Vector};

/// RNG for item `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// `n × d` Gaussian matrix of rank `r`.
pub fn low_rank_matrix<R: Rng>(rng: &mut R, n: usize, d: usize, r: usize) -> DenseMatrix {
    gaussian_matrix(rng, n, r) * gaussian_matrix(rng, r, d)
}

/// Haar-like random orthogonal matrix from the SVD of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> DenseMatrix {
    let g = gaussian_matrix(rng, d, d);
    column_basis(&g, &ToleranceConfig::default()).expect("Gaussian matrices have full rank")
}

/// `Q diag(λ) Qᵀ` with the given eigenvalues.
pub fn psd_with_spectrum(q: &DenseMatrix, eigenvalues: &[f64]) -> DenseMatrix {
    let lam = DenseMatrix::from_diagonal(&Vector::from_column_slice(eigenvalues));
    let s = q * lam * q.transpose();
    (&s + s.transpose()) * 0.5
}

/// Random covariance with log-uniform eigenvalues in `[0.1, 10]`; with
/// probability `p_singular` a random subset of eigenvalues is zeroed.
pub fn random_covariance<R: Rng>(rng: &mut R, d: usize, p_singular: f64) -> DenseMatrix {
    let q = random_orthogonal(rng, d);
    let singular = rng.random_bool(p_singular);
    let eigenvalues: Vec<f64> = (0..d)
        .map(|_| {
            if singular && rng.random_bool(0.3) {
                0.0
            } else {
                10f64.powf(rng.random_range(-1.0..1.0))
            }
        })
        .collect();
    psd_with_spectrum(&q, &eigenvalues)
}

/// How the rows of a random `X_ext` relate to the row space of `X_std`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtraRegime {
    Generic,
    RowSpace,
    NullSpace,
    Mixed,
}

/// Rows of `X_ext` drawn in the given regime relative to `x_std`.
pub fn random_extra<R: Rng>(rng: &mut R, x_std: &DenseMatrix, m: usize, regime: ExtraRegime) -> DenseMatrix {
    let d = x_std.ncols();
    let tol = ToleranceConfig::default();
    let null = null_basis(x_std, &tol).expect("finite matrix");
    let raw = gaussian_matrix(rng, m, d);
    match regime {
        ExtraRegime::Generic => raw,
        ExtraRegime::RowSpace => gaussian_matrix(rng, m, x_std.nrows()) * x_std,
        ExtraRegime::NullSpace => gaussian_matrix(rng, m, null.ncols()) * null.transpose(),
        ExtraRegime::Mixed => {
            let row_part = gaussian_matrix(rng, m, x_std.nrows()) * x_std;
            let null_part = gaussian_matrix(rng, m, null.ncols()) * null.transpose();
            DenseMatrix::from_fn(m, d, |i, j| if i % 2 == 0 { row_part[(i, j)] } else { null_part[(i, j)] })
        }
    }
}

/// Random noiseless regression instance with `d ≤ max_dim`, `1 ≤ n, m ≤ d`.
pub fn random_instance<R: Rng>(rng: &mut R, max_dim: usize) -> RegressionInstance {
    let d = rng.random_range(2..=max_dim.max(2));
    let n = rng.random_range(1..=d);
    let m = rng.random_range(1..=d);
    let regime = match rng.random_range(0..4) {
        0 => ExtraRegime::Generic,
        1 => ExtraRegime::RowSpace,
        2 => ExtraRegime::NullSpace,
        _ => ExtraRegime::Mixed,
    };
    let x_std = gaussian_matrix(rng, n, d);
    let x_ext = random_extra(rng, &x_std, m, regime);
    let theta_star = gaussian_vector(rng, d);
    let sigma = random_covariance(rng, d, 0.2);
    RegressionInstance::noiseless(x_std, x_ext, theta_star, sigma).expect("generated shapes agree")
}
