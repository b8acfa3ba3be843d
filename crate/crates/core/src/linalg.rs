//! Dense linear-algebra kernel: pseudo-inverses, projectors, symmetric roots and
//! the equality-constrained quadratic solver used by RST.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, LabError, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const MAX_ITER: usize = 100_000;
// nalgebra's own default; a tighter threshold can stall the iteration and
// return an unconverged factorization.
const CONVERGENCE_EPS: f64 = 5.0 * f64::EPSILON;

/// Numerical tolerances shared by every operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// Singular values below `rank_rel_tol * sigma_max` count as zero.
    pub rank_rel_tol: f64,
    /// Absolute tolerance for identity checks and feasibility.
    pub eq_abs_tol: f64,
    /// Relative ridge added to semi-definite matrices before taking roots.
    pub psd_shift: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-10,
            eq_abs_tol: 1e-8,
            psd_shift: 1e-10,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.rank_rel_tol > 0.0 && self.eq_abs_tol > 0.0 && self.psd_shift > 0.0;
        if !all_positive || !self.rank_rel_tol.is_finite() || self.rank_rel_tol >= 1.0 {
            return Err(invalid(format!("tolerances must be positive with rank_rel_tol < 1, got {self:?}")));
        }
        Ok(())
    }
}

pub fn ensure_finite(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

pub fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

/// Builds a matrix from row slices, rejecting ragged or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DenseMatrix> {
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(mismatch(format!("row of length {} in a matrix with {cols} columns", bad.len())));
    }
    let m = DenseMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

/// Builds a matrix from row vectors of equal dimension `cols`.
pub fn matrix_from_vectors(rows: &[Vector], cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Stacks `top` above `bottom`.
pub fn vstack(top: &DenseMatrix, bottom: &DenseMatrix) -> Result<DenseMatrix> {
    if top.ncols() != bottom.ncols() {
        return Err(mismatch(format!("cannot stack {} and {} columns", top.ncols(), bottom.ncols())));
    }
    let (n1, n2) = (top.nrows(), bottom.nrows());
    Ok(DenseMatrix::from_fn(n1 + n2, top.ncols(), |i, j| {
        if i < n1 {
            top[(i, j)]
        } else {
            bottom[(i - n1, j)]
        }
    }))
}

pub fn vconcat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

pub fn is_symmetric(a: &DenseMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

/// Thin singular value decomposition with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl Decomposition {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn rank_with_cutoff(&self, cutoff: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

/// Singular value decomposition. The Golub–Kahan result from nalgebra is
/// validated (reconstruction and orthogonality) and replaced by a one-sided
/// Jacobi decomposition when it fails, which happens on some rank-deficient
/// inputs.
pub fn svd(a: &DenseMatrix) -> Result<Decomposition> {
    ensure_finite(a, "matrix")?;
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Ok(Decomposition {
            u: DenseMatrix::zeros(n, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(d, 0),
        });
    }
    if let Some(dec) = golub_kahan_svd(a) {
        if is_accurate(a, &dec) {
            return Ok(dec);
        }
    }
    Ok(jacobi_svd(a))
}

fn sorted(u: DenseMatrix, values: Vec<f64>, v: DenseMatrix) -> Decomposition {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let k = order.len();
    Decomposition {
        u: DenseMatrix::from_fn(u.nrows(), k, |i, c| u[(i, order[c])]),
        singular_values: order.iter().map(|&i| values[i]).collect(),
        v: DenseMatrix::from_fn(v.nrows(), k, |i, c| v[(i, order[c])]),
    }
}

fn golub_kahan_svd(a: &DenseMatrix) -> Option<Decomposition> {
    let raw = SVD::try_new(a.clone(), true, true, CONVERGENCE_EPS, MAX_ITER)?;
    let u = raw.u?;
    let v = raw.v_t?.transpose();
    Some(sorted(u, raw.singular_values.iter().copied().collect(), v))
}

fn is_accurate(a: &DenseMatrix, dec: &Decomposition) -> bool {
    let k = dec.singular_values.len();
    let scale = dec.sigma_max().max(f64::MIN_POSITIVE);
    let dim = a.nrows().max(a.ncols()) as f64;
    let mut rec = dec.u.clone();
    for (c, &s) in dec.singular_values.iter().enumerate() {
        rec.column_mut(c).scale_mut(s);
    }
    let rec_err = (rec * dec.v.transpose() - a).amax();
    let orth_err = (dec.v.transpose() * &dec.v - DenseMatrix::identity(k, k)).amax();
    rec_err <= 1e-13 * dim * scale && orth_err <= 1e-13 * dim
}

/// One-sided (Hestenes) Jacobi SVD: orthogonalizes the columns of the taller
/// orientation of `a` by plane rotations.
pub fn jacobi_svd(a: &DenseMatrix) -> Decomposition {
    let transpose = a.nrows() < a.ncols();
    let mut work = if transpose { a.transpose() } else { a.clone() };
    let (m, k) = work.shape();
    let mut v = DenseMatrix::identity(k, k);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (alpha, beta, gamma) = {
                    let cp = work.column(p);
                    let cq = work.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut work, p, q, c, s, m);
                rotate_columns(&mut v, p, q, c, s, k);
            }
        }
        if !rotated {
            break;
        }
    }
    let values: Vec<f64> = (0..k).map(|j| work.column(j).norm()).collect();
    let mut u = work;
    for (j, &s) in values.iter().enumerate() {
        if s > 0.0 {
            u.column_mut(j).unscale_mut(s);
        }
    }
    if transpose {
        sorted(v, values, u)
    } else {
        sorted(u, values, v)
    }
}

fn rotate_columns(x: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64, rows: usize) {
    for i in 0..rows {
        let xp = x[(i, p)];
        let xq = x[(i, q)];
        x[(i, p)] = c * xp - s * xq;
        x[(i, q)] = s * xp + c * xq;
    }
}

fn pinv_from(dec: &Decomposition, cutoff: f64, rows: usize, cols: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(cols, rows);
    for (k, &s) in dec.singular_values.iter().enumerate() {
        if s > cutoff {
            out += (dec.v.column(k) / s) * dec.u.column(k).transpose();
        }
    }
    out
}

/// Moore–Penrose pseudo-inverse with a cutoff relative to the largest singular value.
pub fn pinv(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let dec = svd(a)?;
    let cutoff = tol.rank_rel_tol * dec.sigma_max();
    Ok(pinv_from(&dec, cutoff, a.nrows(), a.ncols()))
}

/// Pseudo-inverse whose cutoff is relative to an externally supplied scale,
/// for matrices that are small residues of a larger computation.
pub fn pinv_scaled(a: &DenseMatrix, scale: f64, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let dec = svd(a)?;
    let cutoff = tol.rank_rel_tol * scale.max(dec.sigma_max());
    Ok(pinv_from(&dec, cutoff, a.nrows(), a.ncols()))
}

pub fn rank(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<usize> {
    let dec = svd(a)?;
    Ok(dec.rank_with_cutoff(tol.rank_rel_tol * dec.sigma_max()))
}

/// Orthonormal bases `(row, null)` of the row space and null space of `a`,
/// returned as columns of `d × r` and `d × (d − r)` matrices.
pub fn row_and_null_basis(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, d) = a.shape();
    // Pad short matrices with zero rows so the SVD returns a complete V.
    let padded;
    let square = if n < d {
        padded = vstack(a, &DenseMatrix::zeros(d - n, d))?;
        &padded
    } else {
        a
    };
    let dec = svd(square)?;
    if d == 0 {
        return Ok((DenseMatrix::zeros(0, 0), DenseMatrix::zeros(0, 0)));
    }
    let r = dec.rank_with_cutoff(tol.rank_rel_tol * dec.sigma_max());
    let row = dec.v.columns(0, r).into_owned();
    let null = dec.v.columns(r, d - r).into_owned();
    Ok((row, null))
}

pub fn null_basis(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    Ok(row_and_null_basis(a, tol)?.1)
}

/// Orthogonal projector onto Null(a), built as `N Nᵀ` so it is exactly zero
/// when the null space is trivial.
pub fn null_projector(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let n = null_basis(a, tol)?;
    Ok(&n * n.transpose())
}

/// Orthogonal projector onto the row space of `a`.
pub fn row_projector(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let (row, _) = row_and_null_basis(a, tol)?;
    Ok(&row * row.transpose())
}

/// Orthonormal basis of the column space of `a` (columns of the result).
pub fn column_basis(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    let dec = svd(a)?;
    let r = dec.rank_with_cutoff(tol.rank_rel_tol * dec.sigma_max().max(tol.eq_abs_tol));
    Ok(dec.u.columns(0, r).into_owned())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending. Each
/// eigenvector is sign-normalized so its largest-magnitude entry is positive.
pub fn sym_eigen(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<(Vec<f64>, DenseMatrix)> {
    ensure_finite(a, "matrix")?;
    if !is_symmetric(a, tol.eq_abs_tol) {
        return Err(invalid("matrix is not symmetric"));
    }
    let d = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, CONVERGENCE_EPS, MAX_ITER)
        .ok_or_else(|| LabError::NumericFailure("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DenseMatrix::from_fn(d, d, |i, c| eig.eigenvectors[(i, order[c])]);
    for mut col in vectors.column_iter_mut() {
        let lead = col.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok((values, vectors))
}

/// Result of [`sym_root_inv`]; `shift` is set when a ridge was added.
#[derive(Debug, Clone)]
pub struct SymRootInv {
    pub matrix: DenseMatrix,
    pub shift: Option<f64>,
}

/// `M^{-1/2}` for symmetric positive definite `M`. Semi-definite input is
/// shifted by `psd_shift * lambda_max` first, and the shift is reported.
pub fn sym_root_inv(m: &DenseMatrix, tol: &ToleranceConfig) -> Result<SymRootInv> {
    let (values, vectors) = sym_eigen(m, tol)?;
    let lambda_max = values.first().copied().unwrap_or(0.0);
    let lambda_min = values.last().copied().unwrap_or(0.0);
    if lambda_min < -tol.eq_abs_tol {
        return Err(invalid(format!("matrix has negative eigenvalue {lambda_min:.3e}")));
    }
    if lambda_max <= 0.0 {
        return Err(invalid("matrix is zero"));
    }
    let shift = (lambda_min <= tol.rank_rel_tol * lambda_max).then_some(tol.psd_shift * lambda_max);
    let add = shift.unwrap_or(0.0);
    let d = m.nrows();
    let mut out = DenseMatrix::zeros(d, d);
    for (k, &lam) in values.iter().enumerate() {
        let q = vectors.column(k);
        out += (q / (lam.max(0.0) + add).sqrt()) * q.transpose();
    }
    Ok(SymRootInv { matrix: out, shift })
}

/// Least-squares solution `A⁺b`, rejecting inconsistent systems.
pub fn consistent_solve(a: &DenseMatrix, b: &Vector, tol: &ToleranceConfig) -> Result<Vector> {
    if a.nrows() != b.len() {
        return Err(mismatch(format!("{} rows but {} targets", a.nrows(), b.len())));
    }
    ensure_finite_vec(b, "targets")?;
    let x = pinv(a, tol)? * b;
    let residual = (a * &x - b).amax();
    let allowed = tol.eq_abs_tol * b.amax().max(1.0);
    if residual > allowed {
        return Err(LabError::Infeasible { residual, tol: allowed });
    }
    Ok(x)
}

/// `argmin (θ−θ₀)ᵀS(θ−θ₀)` subject to `Aθ = b`. When the objective is flat
/// along feasible directions, returns the optimum closest to `θ₀`.
pub fn solve_constrained_quadratic(
    s: &DenseMatrix,
    theta0: &Vector,
    a: &DenseMatrix,
    b: &Vector,
    tol: &ToleranceConfig,
) -> Result<Vector> {
    let d = theta0.len();
    if s.shape() != (d, d) || a.ncols() != d {
        return Err(mismatch(format!(
            "S is {:?}, A is {:?}, theta0 has dimension {d}",
            s.shape(),
            a.shape()
        )));
    }
    ensure_finite(s, "S")?;
    ensure_finite_vec(theta0, "theta0")?;
    if !is_symmetric(s, tol.eq_abs_tol) {
        return Err(invalid("S is not symmetric"));
    }
    let particular = if a.nrows() == 0 {
        Vector::zeros(d)
    } else {
        consistent_solve(a, b, tol)?
    };
    let null = if a.nrows() == 0 {
        DenseMatrix::identity(d, d)
    } else {
        null_basis(a, tol)?
    };
    if null.ncols() == 0 {
        return Ok(particular);
    }
    let offset = &particular - theta0;
    let nt = null.transpose();
    let h = &nt * s * &null;
    let g = &nt * s * &offset;
    let h_pinv = pinv(&h, tol)?;
    let k = h.nrows();
    let flat = DenseMatrix::identity(k, k) - &h_pinv * &h;
    let z = -(&h_pinv * g) - flat * (&nt * &offset);
    Ok(particular + null * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gaussian_matrix, low_rank_matrix, rng_for};
    use proptest::prelude::*;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    fn diag(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&Vector::from_column_slice(v))
    }

    fn max_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn pinv_of_identity_and_diagonal() {
        let i2 = DenseMatrix::identity(2, 2);
        assert!(max_diff(&pinv(&i2, &tol()).unwrap(), &i2) < 1e-14);
        let p = pinv(&diag(&[2.0, 0.0]), &tol()).unwrap();
        assert!(max_diff(&p, &diag(&[0.5, 0.0])) < 1e-14);
    }

    #[test]
    fn pinv_reconstructs_random_tall_matrix() {
        let a = gaussian_matrix(&mut rng_for(3, 0), 3, 2);
        let p = pinv(&a, &tol()).unwrap();
        assert!(max_diff(&(&a * &p * &a), &a) < 1e-10);
    }

    #[test]
    fn jacobi_svd_reconstructs_rank_deficient_matrices() {
        for seed in 0..40 {
            let mut rng = rng_for(seed, 5);
            let (n, d) = (2 + seed as usize % 13, 2 + (seed as usize * 7) % 13);
            let a = low_rank_matrix(&mut rng, n, d, 1 + seed as usize % n.min(d));
            let dec = jacobi_svd(&a);
            let k = dec.singular_values.len();
            let s = DenseMatrix::from_diagonal(&Vector::from_vec(dec.singular_values.clone()));
            assert!(max_diff(&(&dec.u * s * dec.v.transpose()), &a) < 1e-12 * (1.0 + a.amax()));
            assert!(max_diff(&(dec.v.transpose() * &dec.v), &DenseMatrix::identity(k, k)) < 1e-12);
            assert!(dec.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn pinv_rejects_nan() {
        let mut a = DenseMatrix::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(pinv(&a, &tol()), Err(LabError::InvalidInput(_))));
    }

    #[test]
    fn pinv_of_empty_matrix_has_transposed_shape() {
        let a = DenseMatrix::zeros(0, 3);
        assert_eq!(pinv(&a, &tol()).unwrap().shape(), (3, 0));
    }

    #[test]
    fn null_projector_examples() {
        let a = DenseMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        assert!(max_diff(&null_projector(&a, &tol()).unwrap(), &diag(&[1.0, 1.0, 0.0])) < 1e-14);

        let full = null_projector(&DenseMatrix::identity(3, 3), &tol()).unwrap();
        assert_eq!(full.amax(), 0.0);

        let v = Vector::from_column_slice(&[1.0, 1.0, 0.0]);
        let a = DenseMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let expected = DenseMatrix::identity(3, 3) - (&v * v.transpose()) / v.norm_squared();
        assert!(max_diff(&null_projector(&a, &tol()).unwrap(), &expected) < 1e-14);
    }

    #[test]
    fn sym_root_inv_examples() {
        let i3 = DenseMatrix::identity(3, 3);
        let r = sym_root_inv(&i3, &tol()).unwrap();
        assert!(r.shift.is_none());
        assert!(max_diff(&r.matrix, &i3) < 1e-14);

        let r = sym_root_inv(&diag(&[4.0, 1.0]), &tol()).unwrap();
        assert!(max_diff(&r.matrix, &diag(&[0.5, 1.0])) < 1e-14);
    }

    #[test]
    fn sym_root_inv_flags_shift_for_semidefinite_input() {
        // Second-difference Gram matrix: PSD with the constants and lines in its kernel.
        let d = 6;
        let mut diff = DenseMatrix::zeros(d - 2, d);
        for i in 0..d - 2 {
            diff[(i, i)] = 1.0;
            diff[(i, i + 1)] = -2.0;
            diff[(i, i + 2)] = 1.0;
        }
        let m = diff.transpose() * &diff;
        let r = sym_root_inv(&m, &tol()).unwrap();
        let shift = r.shift.expect("shift should be flagged");
        let shifted = &m + DenseMatrix::identity(d, d) * shift;
        let check = &r.matrix * shifted * &r.matrix;
        // The shifted matrix has condition number 1e10, so the residual floor
        // is about machine epsilon times 1e10.
        assert!(max_diff(&check, &DenseMatrix::identity(d, d)) < 1e-5);
    }

    #[test]
    fn sym_root_inv_rejects_asymmetric_and_indefinite() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(sym_root_inv(&a, &tol()).is_err());
        assert!(sym_root_inv(&diag(&[1.0, -1.0]), &tol()).is_err());
    }

    #[test]
    fn constrained_quadratic_examples() {
        let y = Vector::from_column_slice(&[1.0, -2.0, 3.0]);
        let i3 = DenseMatrix::identity(3, 3);
        let out = solve_constrained_quadratic(&i3, &Vector::zeros(3), &i3, &y, &tol()).unwrap();
        assert!((out - &y).amax() < 1e-12);

        let s = diag(&[1.0, 4.0, 1.0]);
        let a = DenseMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, -1.0, 0.0]);
        let b = Vector::from_column_slice(&[5.0, 0.0]);
        let theta0 = Vector::from_column_slice(&[0.0, 1.0, 5.0]);
        let out = solve_constrained_quadratic(&s, &theta0, &a, &b, &tol()).unwrap();
        assert!((out - Vector::from_column_slice(&[0.8, 0.8, 5.0])).amax() < 1e-12);

        let theta0 = Vector::from_column_slice(&[0.0, 0.0, 5.0]);
        let out = solve_constrained_quadratic(&s, &theta0, &a, &b, &tol()).unwrap();
        assert!((out - theta0).amax() < 1e-12);
    }

    #[test]
    fn constrained_quadratic_rejects_inconsistent_rows() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let b = Vector::from_column_slice(&[1.0, 2.0]);
        let s = DenseMatrix::identity(2, 2);
        let err = solve_constrained_quadratic(&s, &Vector::zeros(2), &a, &b, &tol()).unwrap_err();
        assert!(matches!(err, LabError::Infeasible { .. }));
    }

    #[test]
    fn constrained_quadratic_tie_break_is_nearest_point() {
        // S vanishes on the second coordinate, so any θ₂ is optimal.
        let s = diag(&[1.0, 0.0]);
        let a = DenseMatrix::zeros(0, 2);
        let b = Vector::zeros(0);
        let theta0 = Vector::from_column_slice(&[3.0, -7.0]);
        let out = solve_constrained_quadratic(&s, &theta0, &a, &b, &tol()).unwrap();
        assert!((out - theta0).amax() < 1e-12);
    }

    /// Largest Penrose-identity residual, each relative to the norms of its
    /// factors: rounding in `PAP` grows like `‖P‖²‖A‖`.
    fn moore_penrose_residual(a: &DenseMatrix, p: &DenseMatrix) -> f64 {
        let ap = a * p;
        let pa = p * a;
        let (na, np) = (a.norm().max(1.0), p.norm().max(1.0));
        [
            max_diff(&(&ap * a), a) / (na * na * np),
            max_diff(&(&pa * p), p) / (np * np * na),
            max_diff(&ap, &ap.transpose()) / (na * np),
            max_diff(&pa, &pa.transpose()) / (na * np),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    proptest! {
        #[test]
        fn moore_penrose_identities(n in 1usize..20, d in 1usize..20, r in 1usize..20, seed in any::<u64>()) {
            let a = low_rank_matrix(&mut rng_for(seed, 1), n, d, r.min(n).min(d));
            let p = pinv(&a, &tol()).unwrap();
            prop_assert!(moore_penrose_residual(&a, &p) < 1e-9);
        }

        #[test]
        fn projector_algebra(n in 1usize..10, d in 1usize..12, seed in any::<u64>()) {
            let mut rng = rng_for(seed, 2);
            let a = gaussian_matrix(&mut rng, n, d);
            let p = null_projector(&a, &tol()).unwrap();
            prop_assert!(max_diff(&(&p * &p), &p) < 1e-10);
            prop_assert!(max_diff(&p, &p.transpose()) < 1e-12);
            prop_assert!((&p * a.transpose()).amax() < 1e-10);
            let expected_rank = d - n.min(d);
            prop_assert_eq!(rank(&p, &tol()).unwrap(), expected_rank);
            let x = &p * gaussian_matrix(&mut rng, d, 1).column(0);
            prop_assert!((&p * &x - &x).amax() < 1e-10);
        }

        #[test]
        fn null_projectors_nest(n in 1usize..8, m in 1usize..8, d in 2usize..16, seed in any::<u64>()) {
            let mut rng = rng_for(seed, 3);
            let x_std = gaussian_matrix(&mut rng, n, d);
            let x_ext = gaussian_matrix(&mut rng, m, d);
            let p_std = null_projector(&x_std, &tol()).unwrap();
            let p_aug = null_projector(&vstack(&x_std, &x_ext).unwrap(), &tol()).unwrap();
            prop_assert!(max_diff(&(&p_std * &p_aug), &p_aug) < 1e-9);
        }

        #[test]
        fn constrained_quadratic_is_feasible_kkt_point(
            n in 1usize..8, d in 2usize..12, rank_s in 0usize..12, seed in any::<u64>()
        ) {
            let mut rng = rng_for(seed, 4);
            let n = n.min(d);
            let a = gaussian_matrix(&mut rng, n, d);
            let b = &a * gaussian_matrix(&mut rng, d, 1).column(0);
            let half = gaussian_matrix(&mut rng, rank_s.min(d), d);
            let s = half.transpose() * &half;
            let theta0 = gaussian_matrix(&mut rng, d, 1).column(0).into_owned();
            let theta = solve_constrained_quadratic(&s, &theta0, &a, &b, &tol()).unwrap();
            prop_assert!((&a * &theta - &b).amax() < 1e-8);
            let grad = &s * (&theta - &theta0) * 2.0;
            let off_rows = null_projector(&a, &tol()).unwrap() * grad;
            prop_assert!(off_rows.amax() < 1e-8 * (1.0 + s.amax()));
        }
    }
}

