//! Dense two-phase simplex for `min cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Pivoting follows Bland's rule (lowest eligible index enters, lowest basic
//! index breaks ratio ties), so the returned vertex is a deterministic
//! function of the input and the method cannot cycle.

use crate::error::{mismatch, LabError, Result};
use crate::linalg::{pinv, svd, DenseMatrix, ToleranceConfig};

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        self.rhs[row] /= p;
        let pivot_row = self.rows[row].clone();
        let pivot_rhs = self.rhs[row];
        for r in 0..self.rows.len() {
            if r == row {
                continue;
            }
            let f = self.rows[r][col];
            if f != 0.0 {
                for (v, pv) in self.rows[r].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[r] -= f * pivot_rhs;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations for `cost` over the columns `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let scale = cost.iter().fold(1.0_f64, |a, c| a.max(c.abs()));
        loop {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.rows)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                reduced < -PIVOT_TOL * scale
            });
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[r] / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= PIVOT_TOL * (1.0 + lratio.abs());
                            if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else { return Err(LabError::Unbounded) };
            self.pivot(row, col);
        }
    }
}

/// Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0`.
pub fn solve_standard_form(c: &[f64], a: &DenseMatrix, b: &[f64]) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(mismatch(format!("LP with A {m}×{n}, c of length {}, b of length {}", c.len(), b.len())));
    }
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row: Vec<f64> = (0..n).map(|j| sign * a[(i, j)]).collect();
        row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        rows.push(row);
        rhs.push(sign * b[i]);
    }
    let mut t = Tableau {
        rows,
        rhs,
        basis: (n..n + m).collect(),
        pivots: 0,
    };

    let phase1: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    t.optimize(&phase1, n + m)?;
    let infeasibility: f64 = t.basis.iter().zip(&t.rhs).filter(|(&b, _)| b >= n).map(|(_, v)| v).sum();
    let b_scale = b.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if infeasibility > 1e-9 * b_scale {
        return Err(LabError::Infeasible { residual: infeasibility, tol: 1e-9 * b_scale });
    }

    // Drive artificial variables out of the basis; drop redundant rows.
    let mut r = 0;
    while r < t.rows.len() {
        if t.basis[r] >= n {
            match (0..n).find(|&j| t.rows[r][j].abs() > 1e-9) {
                Some(j) => t.pivot(r, j),
                None => {
                    t.rows.remove(r);
                    t.rhs.remove(r);
                    t.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    t.optimize(&phase2, n)?;

    let mut x = vec![0.0; n];
    for (&bv, &v) in t.basis.iter().zip(&t.rhs) {
        if bv < n {
            x[bv] = v.max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, objective, pivots: t.pivots })
}

/// Independent optimum by enumerating every basic feasible solution. Only
/// practical for a handful of columns; used to cross-check the simplex.
pub fn brute_force_min(c: &[f64], a: &DenseMatrix, b: &[f64]) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(mismatch("LP dimensions disagree"));
    }
    // Replace the rows by an equivalent full-row-rank system Uᵣᵀ A x = Uᵣᵀ b.
    let dec = svd(a)?;
    let r = dec.rank_with_cutoff(1e-10 * dec.sigma_max());
    let ur = dec.u.columns(0, r).transpose();
    let reduced = &ur * a;
    let bvec = nalgebra::DVector::from_column_slice(b);
    let rb = &ur * &bvec;
    let least_squares = pinv(a, &ToleranceConfig::default())? * &bvec;
    let residual = (a * least_squares - &bvec).amax();
    if residual > 1e-9 * bvec.amax().max(1.0) {
        return Err(LabError::Infeasible { residual, tol: 1e-9 });
    }

    let mut best: Option<LpSolution> = None;
    let mut subset: Vec<usize> = (0..r).collect();
    loop {
        let cols = DenseMatrix::from_fn(r, r, |i, k| reduced[(i, subset[k])]);
        if let Some(inv) = cols.clone().try_inverse() {
            let xs = inv * &rb;
            let consistent = (&cols * &xs - &rb).amax() <= 1e-9 * rb.amax().max(1.0);
            if consistent && xs.iter().all(|&v| v >= -1e-9) {
                let mut x = vec![0.0; n];
                for (k, &j) in subset.iter().enumerate() {
                    x[j] = xs[k].max(0.0);
                }
                let objective: f64 = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
                if best.as_ref().is_none_or(|b| objective < b.objective) {
                    best = Some(LpSolution { x, objective, pivots: 0 });
                }
            }
        }
        // Next r-combination of 0..n in lexicographic order.
        let Some(i) = (0..r).rev().find(|&i| subset[i] != i + n - r) else { break };
        subset[i] += 1;
        for k in i + 1..r {
            subset[k] = subset[k - 1] + 1;
        }
    }
    if r == 0 {
        return Ok(LpSolution { x: vec![0.0; n], objective: 0.0, pivots: 0 });
    }
    best.ok_or(LabError::Infeasible { residual: f64::NAN, tol: 1e-9 })
}
