//! Clamped cubic B-splines: Cox–de Boor evaluation with derivatives and the
//! second-derivative penalty matrix.

use crate::error::{invalid, LabError, Result};
use crate::linalg::{DenseMatrix, Vector};

pub const DEGREE: usize = 3;

/// Cubic B-spline basis on strictly increasing breakpoints, with the
/// boundary knots repeated to multiplicity four.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    breakpoints: Vec<f64>,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(invalid("a spline basis needs at least two breakpoints"));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("breakpoints must be finite and strictly increasing"));
        }
        let lo = breakpoints[0];
        let hi = *breakpoints.last().unwrap();
        let mut knots = vec![lo; DEGREE];
        knots.extend_from_slice(&breakpoints);
        knots.extend(std::iter::repeat_n(hi, DEGREE));
        Ok(Self { breakpoints, knots })
    }

    /// Knots `[0, ε, 1, 1+ε, …, s−1, s−1+ε]`, one per staircase input.
    pub fn staircase(s: usize, epsilon: f64) -> Result<Self> {
        if s == 0 || !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid(format!("need s ≥ 1 and 0 < ε < 1, got s = {s}, ε = {epsilon}")));
        }
        Self::new((0..s).flat_map(|i| [i as f64, i as f64 + epsilon]).collect())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Full knot vector including the repeated boundary knots.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Greville abscissae: coefficients equal to these reproduce `f(t) = t`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.knots[j + 1..=j + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }

    fn check(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(LabError::OutOfDomain { t, lo, hi });
        }
        Ok(())
    }

    /// Index `i` of the knot span `knots[i] ≤ t < knots[i+1]`; the right
    /// boundary belongs to the last non-empty span.
    fn span(&self, t: f64) -> usize {
        let last = self.dim() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // knots[DEGREE..=last+1] are the breakpoints.
        let pos = self.breakpoints.partition_point(|&b| b <= t);
        pos - 1 + DEGREE
    }

    /// Values and derivatives up to `order` of the four basis functions that
    /// are nonzero at `t`, as `(first_index, ders)` with `ders[k][r]` the
    /// `k`-th derivative of function `first_index + r`.
    fn local_derivatives(&self, t: f64, order: usize) -> (usize, Vec<[f64; DEGREE + 1]>) {
        const P: usize = DEGREE;
        let u = &self.knots;
        let i = self.span(t);
        let mut ndu = [[0.0; P + 1]; P + 1];
        let mut left = [0.0; P + 1];
        let mut right = [0.0; P + 1];
        ndu[0][0] = 1.0;
        for j in 1..=P {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let order = order.min(P);
        let mut ders = vec![[0.0; P + 1]; order + 1];
        for j in 0..=P {
            ders[0][j] = ndu[j][P];
        }
        let pi = P as isize;
        for r in 0..=P {
            let ri = r as isize;
            let mut a = [[0.0; P + 1]; 2];
            let (mut s1, mut s2) = (0, 1);
            a[0][0] = 1.0;
            for k in 1..=order {
                let ki = k as isize;
                let rk = ri - ki;
                let pk = pi - ki;
                let mut d = 0.0;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if ri - 1 <= pk { ki - 1 } else { pi - ri };
                for j in j1..=j2 {
                    let ju = j as usize;
                    a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][(rk + j) as usize];
                    d += a[s2][ju] * ndu[(rk + j) as usize][pk as usize];
                }
                if ri <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                    d += a[s2][k] * ndu[r][pk as usize];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = P as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (P - k) as f64;
        }
        (i - P, ders)
    }

    /// `order`-th derivative of every basis function at `t`.
    pub fn derivative_features(&self, t: f64, order: usize) -> Result<Vector> {
        self.check(t)?;
        let mut out = Vector::zeros(self.dim());
        if order > DEGREE {
            return Ok(out);
        }
        let (first, ders) = self.local_derivatives(t, order);
        for r in 0..=DEGREE {
            out[first + r] = ders[order][r];
        }
        Ok(out)
    }

    /// Feature vector `X(t)`: the basis functions evaluated at `t`.
    pub fn features(&self, t: f64) -> Result<Vector> {
        let mut out = self.derivative_features(t, 0)?;
        // Clean rounding noise so exact zeros stay zero.
        out.iter_mut().for_each(|v| {
            if v.abs() < 1e-300 {
                *v = 0.0
            }
        });
        Ok(out)
    }

    /// Rows `X(t)` for each `t`.
    pub fn design(&self, ts: &[f64]) -> Result<DenseMatrix> {
        let mut m = DenseMatrix::zeros(ts.len(), self.dim());
        for (k, &t) in ts.iter().enumerate() {
            m.set_row(k, &self.features(t)?.transpose());
        }
        Ok(m)
    }

    /// `f(t) = θᵀX(t)`.
    pub fn evaluate(&self, theta: &Vector, t: f64) -> Result<f64> {
        Ok(self.features(t)?.dot(theta))
    }
}

/// Nodes and weights of Gauss–Legendre rules on `[-1, 1]`.
pub(crate) const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
pub(crate) const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// `∫_a^b g` with the given rule mapped to `[a, b]`.
pub(crate) fn integrate(rule: &[(f64, f64)], a: f64, b: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|&(x, w)| w * half * g(mid + half * x)).sum()
}

/// `[M]ᵢⱼ = ∫ Xᵢ″ Xⱼ″` over the basis domain. Second derivatives are linear
/// on each knot interval, so two Gauss points per interval are exact.
pub fn penalty_matrix(basis: &SplineBasis) -> DenseMatrix {
    let d = basis.dim();
    let mut m = DenseMatrix::zeros(d, d);
    for w in basis.breakpoints().windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for &(x, weight) in &GAUSS2 {
            let (first, ders) = basis.local_derivatives(mid + half * x, 2);
            let second = &ders[2];
            for r in 0..=DEGREE {
                for c in 0..=DEGREE {
                    m[(first + r, first + c)] += weight * half * second[r] * second[c];
                }
            }
        }
    }
    (&m + m.transpose()) * 0.5
}
