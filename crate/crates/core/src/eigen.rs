//! Principal eigenvalue `λ₀(γ,μ)` by two independent routes.
//!
//! * Fixed point: `λ₀` is the smallest positive root of
//!   `G(λ) = ∫u_λ dμ / ∫v_λ dμ - λ`, with `u_λ, v_λ` from [`crate::bvp`].
//! * Matrix: the discretized operator is `A = T₀ - c wᵀ` (tridiagonal minus
//!   rank one), and its smallest eigenvalue is found by shifted inverse
//!   iteration with Sherman–Morrison solves.
//!
//! Both routes share the grid and the quadrature rule for `μ`; with a rule
//! of exact unit mass the two discrete problems have identical roots.

use serde::{Deserialize, Serialize};

use crate::bvp::{self, assemble, check_gamma, TridiagonalOperator};
use crate::error::{Error, Result};
use crate::model::{Grid, JumpMeasure, RateField, ScalarField};

/// Number of equal steps in the bracket scan for the smallest root.
pub const BRACKET_STEPS: usize = 64;
/// Fraction of `λ_*` covered by the bracket scan.
pub const BRACKET_FRACTION: f64 = 0.999;
pub const FIXED_POINT_MAX_ITER: usize = 200;
pub const MATRIX_MAX_ITER: usize = 500;
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Tolerance on the unit mass of a quadrature rule.
const RULE_MASS_TOL: f64 = 1e-10;

/// Discretization of `∫ · dμ`: interior weights plus the weights carried by
/// the two boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub interior: Vec<f64>,
    pub left: f64,
    pub right: f64,
}

impl QuadratureRule {
    pub fn total(&self) -> f64 {
        self.left + self.right + self.interior.iter().sum::<f64>()
    }

    pub fn integrate(&self, f: &ScalarField) -> f64 {
        self.left * f.left
            + self.right * f.right
            + self
                .interior
                .iter()
                .zip(&f.interior)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    pub fn dot_interior(&self, x: &[f64]) -> f64 {
        self.interior.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    fn add_at(&mut self, j: usize, w: f64) {
        let n = self.interior.len();
        match j {
            0 => self.left += w,
            j if j == n + 1 => self.right += w,
            j => self.interior[j - 1] += w,
        }
    }
}

/// Trapezoid weights on the density (rescaled to its exact mass) plus
/// linear-interpolation stencils for atoms.
pub fn quadrature_weights(mu: &JumpMeasure, grid: &Grid) -> QuadratureRule {
    let n = grid.n_interior();
    let h = grid.h();
    let mut rule = QuadratureRule {
        interior: vec![0.0; n],
        left: 0.0,
        right: 0.0,
    };
    if let Some(d) = &mu.density {
        let raw: f64 = h * (d.values.iter().sum::<f64>()
            + 0.5 * (d.endpoint_values[0] + d.endpoint_values[1]));
        let scale = if raw > 0.0 { d.mass / raw } else { 0.0 };
        rule.left = scale * 0.5 * h * d.endpoint_values[0];
        rule.right = scale * 0.5 * h * d.endpoint_values[1];
        for (w, &m) in rule.interior.iter_mut().zip(&d.values) {
            *w = scale * h * m;
        }
    }
    for a in &mu.atoms {
        let s = a.location / h;
        let j = (s.floor() as usize).min(n);
        let theta = s - j as f64;
        rule.add_at(j, a.mass * (1.0 - theta));
        if theta > 0.0 {
            rule.add_at(j + 1, a.mass * theta);
        }
    }
    rule
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    Matrix,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FixedPoint => "fixed_point",
            Method::Matrix => "matrix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda0: f64,
    /// `u_{λ₀,γ}` (absent when `λ₀ = λ_*`, i.e. `γ = 0`).
    pub u_profile: Option<ScalarField>,
    pub v_profile: Option<ScalarField>,
    /// Principal eigenvector normalized to max 1 (matrix route only).
    pub eigenvector: Option<ScalarField>,
    pub method: Method,
    pub iterations: usize,
    pub residual: f64,
    pub lambda_star: f64,
}

/// `T₀ - c wᵀ`: the discretized non-local operator.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    pub t0: TridiagonalOperator,
    pub c: Vec<f64>,
    pub w: QuadratureRule,
}

impl NonlocalOperator {
    pub fn new(gamma: f64, v: &RateField, mu: &JumpMeasure, grid: &Grid) -> Result<Self> {
        check_gamma(gamma)?;
        let w = quadrature_weights(mu, grid);
        let total = w.total();
        if (total - 1.0).abs() > RULE_MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "quadrature rule has mass {total}, expected 1"
            )));
        }
        Ok(Self {
            t0: assemble(0.0, gamma, v, grid),
            c: v.values.iter().map(|vi| gamma * vi).collect(),
            w,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.w.dot_interior(x);
        let mut y = self.t0.matvec(x);
        for (yi, ci) in y.iter_mut().zip(&self.c) {
            *yi -= ci * m;
        }
        y
    }

    pub fn norm_inf(&self) -> f64 {
        let wsum: f64 = self.w.interior.iter().map(|w| w.abs()).sum();
        self.t0.norm_inf() + self.c.iter().fold(0.0_f64, |m, c| m.max(c.abs())) * wsum
    }
}

/// Smallest eigenvalue `λ_*(γ)` of the symmetric `T₀ = -½Δ_h + γV`, the
/// local Dirichlet operator without the jump term.
pub fn base_dirichlet_eigenvalue(gamma: f64, v: &RateField, grid: &Grid) -> Result<f64> {
    check_gamma(gamma)?;
    let t0 = assemble(0.0, gamma, v, grid);
    // T₀ - γ min V is positive definite, so this shift keeps elimination stable
    // while removing the bulk of the diagonal.
    let shift = gamma * v.values.iter().copied().fold(f64::INFINITY, f64::min);
    let lu = t0.shifted(shift).factor()?;
    let n = grid.n_interior();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut rq_prev = f64::NAN;
    for it in 0..2000 {
        let y = lu.solve(&x);
        let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        x = y.into_iter().map(|a| a / norm).collect();
        let tx = t0.matvec(&x);
        let rq: f64 = x.iter().zip(&tx).map(|(a, b)| a * b).sum();
        if it > 2 && (rq - rq_prev).abs() <= 4.0 * f64::EPSILON * rq.abs() {
            return Ok(rq);
        }
        rq_prev = rq;
    }
    Ok(rq_prev)
}

/// Evaluates the fixed-point map at `λ`, returning `(F(λ), u, v)`.
struct FixedPointMap<'a> {
    gamma: f64,
    v: &'a RateField,
    grid: &'a Grid,
    rule: QuadratureRule,
}

impl<'a> FixedPointMap<'a> {
    fn new(gamma: f64, v: &'a RateField, mu: &JumpMeasure, grid: &'a Grid) -> Result<Self> {
        check_gamma(gamma)?;
        let rule = quadrature_weights(mu, grid);
        let total = rule.total();
        if (total - 1.0).abs() > RULE_MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "quadrature rule has mass {total}, expected 1"
            )));
        }
        Ok(Self {
            gamma,
            v,
            grid,
            rule,
        })
    }

    fn eval(&self, lambda: f64) -> Result<(f64, ScalarField, ScalarField)> {
        let (u, w) = bvp::solve_uv(lambda, self.gamma, self.v, self.grid).map_err(|e| match e {
            Error::Singular { .. } => Error::OutOfDomain(format!(
                "lambda = {lambda} is at or above the Dirichlet eigenvalue of the local operator"
            )),
            other => other,
        })?;
        let num = self.rule.integrate(&u);
        let den = self.rule.integrate(&w);
        if !(den > 0.0) {
            return Err(Error::OutOfDomain(format!(
                "integral of v against mu is {den} at lambda = {lambda}"
            )));
        }
        Ok((num / den, u, w))
    }

    fn residual(&self, lambda: f64) -> Result<f64> {
        Ok(self.eval(lambda)?.0 - lambda)
    }
}

/// `G(λ) = ∫u_λ dμ / ∫v_λ dμ - λ`.
pub fn fixed_point_residual(
    lambda: f64,
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::OutOfDomain(format!("lambda must be >= 0, got {lambda}")));
    }
    FixedPointMap::new(gamma, v, mu, grid)?.residual(lambda)
}

fn check_rel_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 1e-14 && rel_tol < 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "rel_tol must lie in (1e-14, 1e-2), got {rel_tol}"
        )));
    }
    Ok(())
}

/// Smallest positive root of `G` by a bracket scan and bisection. Falls back
/// to the matrix route when `γ = 0` (no jump term, so `G` carries no root
/// below `λ_*`).
pub fn principal_eigenvalue_fixed_point(
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    rel_tol: f64,
) -> Result<EigenResult> {
    check_rel_tol(rel_tol)?;
    if gamma == 0.0 {
        return principal_eigenvalue_matrix(gamma, v, mu, grid, rel_tol);
    }
    let map = FixedPointMap::new(gamma, v, mu, grid)?;
    let lambda_star = base_dirichlet_eigenvalue(gamma, v, grid)?;
    let upper = BRACKET_FRACTION * lambda_star;
    let step = upper / BRACKET_STEPS as f64;

    let g0 = map.residual(0.0)?;
    if !(g0 > 0.0) {
        return Err(Error::NoRoot { upper });
    }
    let mut lo = 0.0;
    let mut hi = None;
    for j in 1..=BRACKET_STEPS {
        let lam = j as f64 * step;
        if map.residual(lam)? <= 0.0 {
            hi = Some(lam);
            break;
        }
        lo = lam;
    }
    let mut hi = hi.ok_or(Error::NoRoot { upper })?;

    let mut iterations = 0;
    while hi - lo > rel_tol * hi {
        if iterations == FIXED_POINT_MAX_ITER {
            return Err(Error::NonConvergence {
                iterations,
                detail: format!("bisection bracket [{lo}, {hi}]"),
            });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if map.residual(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let lambda0 = 0.5 * (lo + hi);
    let (f, u, w) = map.eval(lambda0)?;
    Ok(EigenResult {
        lambda0,
        u_profile: Some(u),
        v_profile: Some(w),
        eigenvector: None,
        method: Method::FixedPoint,
        iterations,
        residual: (f - lambda0).abs(),
        lambda_star,
    })
}

/// Smallest-real-part eigenvalue of `A = T₀ - c wᵀ` by shifted inverse
/// iteration. Each solve with `A - σ` uses the factorization of `T₀ - σ`
/// and the Sherman–Morrison scalar `1 - wᵀ(T₀-σ)⁻¹c`.
pub fn principal_eigenvalue_matrix(
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    rel_tol: f64,
) -> Result<EigenResult> {
    check_rel_tol(rel_tol)?;
    let op = NonlocalOperator::new(gamma, v, mu, grid)?;
    let lambda_star = base_dirichlet_eigenvalue(gamma, v, grid)?;
    let n = grid.n_interior();

    let mut shift = 0.0;
    let mut solver = ShiftedSolver::new(&op, shift)?;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut theta_prev = f64::NAN;
    let mut last_delta = f64::NAN;
    let mut flips = 0usize;
    let mut theta = f64::NAN;
    let mut shifted = false;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MATRIX_MAX_ITER {
        iterations += 1;
        let y = solver.solve(&x);
        let yy: f64 = y.iter().map(|a| a * a).sum();
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        theta = shift + xy / yy;
        let sign = if y.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let norm = yy.sqrt();
        x = y.into_iter().map(|a| sign * a / norm).collect();

        let delta = theta - theta_prev;
        if delta.abs() <= rel_tol.max(8.0 * f64::EPSILON) * theta.abs() {
            converged = true;
            break;
        }
        if last_delta.is_finite() && delta * last_delta < 0.0 && delta.abs() >= 0.5 * last_delta.abs()
        {
            flips += 1;
            if flips >= 20 {
                return Err(Error::ComplexSuspected);
            }
        } else {
            flips = 0;
        }
        // Once the estimate has settled, move the shift just below it.
        if !shifted && delta.abs() < 1e-3 * theta.abs() && theta > 0.0 {
            let candidate = 0.9 * theta;
            match ShiftedSolver::new(&op, candidate) {
                Ok(s) => {
                    solver = s;
                    shift = candidate;
                    shifted = true;
                }
                Err(Error::RankOneBreakdown(_)) => shifted = true,
                Err(e) => return Err(e),
            }
        }
        last_delta = delta;
        theta_prev = theta;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            detail: format!("inverse iteration estimate {theta}"),
        });
    }

    let ax = op.apply(&x);
    let xmax = x.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let res = ax
        .iter()
        .zip(&x)
        .map(|(a, b)| (a - theta * b).abs())
        .fold(0.0, f64::max);
    let residual = res / (op.norm_inf() * xmax);
    let eigenvector = ScalarField::new(x.iter().map(|a| a / xmax).collect(), 0.0, 0.0);

    let (u_profile, v_profile) = if theta < lambda_star * (1.0 - 1e-9) {
        match bvp::solve_uv(theta, gamma, v, grid) {
            Ok((u, w)) => (Some(u), Some(w)),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(EigenResult {
        lambda0: theta,
        u_profile,
        v_profile,
        eigenvector: Some(eigenvector),
        method: Method::Matrix,
        iterations,
        residual,
        lambda_star,
    })
}

/// `(A - σ)⁻¹` via `(T₀ - σ)⁻¹` and one rank-one correction.
struct ShiftedSolver<'a> {
    op: &'a NonlocalOperator,
    lu: crate::tridiag::TridiagonalLu,
    z: Vec<f64>,
    denom: f64,
}

impl<'a> ShiftedSolver<'a> {
    fn new(op: &'a NonlocalOperator, shift: f64) -> Result<Self> {
        let lu = op.t0.shifted(shift).factor()?;
        let z = lu.solve(&op.c);
        let wz = op.w.dot_interior(&z);
        let denom = 1.0 - wz;
        if denom.abs() <= 1e-13 * (1.0 + wz.abs()) {
            return Err(Error::RankOneBreakdown(denom));
        }
        Ok(Self { op, lu, z, denom })
    }

    fn solve(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(x);
        let f = self.op.w.dot_interior(&y) / self.denom;
        for (yi, zi) in y.iter_mut().zip(&self.z) {
            *yi += f * zi;
        }
        y
    }
}

/// Route selection: the matrix route for rate fields vanishing on the
/// boundary and for `γ = 0`, otherwise as requested.
pub fn principal_eigenvalue(
    method: Method,
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    rel_tol: f64,
) -> Result<EigenResult> {
    let method = if v.is_degenerate() || gamma == 0.0 {
        Method::Matrix
    } else {
        method
    };
    match method {
        Method::FixedPoint => principal_eigenvalue_fixed_point(gamma, v, mu, grid, rel_tol),
        Method::Matrix => principal_eigenvalue_matrix(gamma, v, mu, grid, rel_tol),
    }
}

/// Eliminates the `O(h²)` term from values on grids `h` and `h/2`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// `λ₀` on `grid` and on its refinement, with the extrapolated value.
#[derive(Debug, Clone)]
pub struct RichardsonResult {
    pub coarse: EigenResult,
    pub fine: EigenResult,
    pub extrapolated: f64,
}

pub fn principal_eigenvalue_richardson(
    method: Method,
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    rel_tol: f64,
) -> Result<RichardsonResult> {
    let coarse = principal_eigenvalue(method, gamma, v, mu, grid, rel_tol)?;
    let fine_grid = grid.refined();
    let vf = v.resample(&fine_grid)?;
    let mf = mu.resample(&fine_grid)?;
    let fine = principal_eigenvalue(method, gamma, &vf, &mf, &fine_grid, rel_tol)?;
    let extrapolated = richardson(coarse.lambda0, fine.lambda0);
    Ok(RichardsonResult {
        coarse,
        fine,
        extrapolated,
    })
}
