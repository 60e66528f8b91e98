//! Tridiagonal matrices and elimination without pivoting.

use crate::error::{Error, Result};

/// Square tridiagonal matrix stored by diagonals. `sub[i]` couples row
/// `i + 1` to column `i`; `sup[i]` couples row `i` to column `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    /// Shift recorded for diagnostics when a pivot vanishes.
    pub lambda: f64,
}

impl TridiagonalOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.sup[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].abs();
                if i > 0 {
                    s += self.sub[i - 1].abs();
                }
                if i + 1 < n {
                    s += self.sup[i].abs();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Same matrix with `shift` subtracted from the diagonal.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            sub: self.sub.clone(),
            diag: self.diag.iter().map(|d| d - shift).collect(),
            sup: self.sup.clone(),
            lambda: self.lambda + shift,
        }
    }

    pub fn factor(&self) -> Result<TridiagonalLu> {
        TridiagonalLu::new(self)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factor()?.solve(rhs))
    }
}

/// LU factors of a tridiagonal matrix (Thomas algorithm).
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    /// Multipliers `l[i] = sub[i] / pivot[i]`.
    lower: Vec<f64>,
    pivots: Vec<f64>,
    sup: Vec<f64>,
}

impl TridiagonalLu {
    fn new(a: &TridiagonalOperator) -> Result<Self> {
        let n = a.len();
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        let scale = a.norm_inf().max(f64::MIN_POSITIVE);
        let mut p = a.diag[0];
        for i in 0..n {
            if i > 0 {
                let l = a.sub[i - 1] / pivots[i - 1];
                lower.push(l);
                p = a.diag[i] - l * a.sup[i - 1];
            }
            if !p.is_finite() || p.abs() <= f64::EPSILON * scale {
                return Err(Error::Singular {
                    row: i,
                    lambda: a.lambda,
                });
            }
            pivots.push(p);
        }
        Ok(Self {
            lower,
            pivots,
            sup: a.sup.clone(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.pivots.len();
        let mut y = rhs.to_vec();
        for i in 1..n {
            y[i] -= self.lower[i - 1] * y[i - 1];
        }
        y[n - 1] /= self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (y[i] - self.sup[i] * y[i + 1]) / self.pivots[i];
        }
        y
    }

    /// True when every pivot is positive (the matrix is positive definite
    /// if it is also symmetric).
    pub fn all_pivots_positive(&self) -> bool {
        self.pivots.iter().all(|p| *p > 0.0)
    }
}
