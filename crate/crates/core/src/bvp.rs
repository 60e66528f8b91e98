//! The two Dirichlet problems behind the fixed-point characterization:
//!
//! ```text
//! ½u'' + (λ - γV)u = 0,  u = 1 on {0,1}
//! ½v'' + (λ - γV)v = -1, v = 0 on {0,1}
//! ```
//!
//! discretized with second-order central differences. Rows are written as
//! `T(λ,γ) = -½Δ_h + diag(γV - λ)`, so the equations read `T u = b`,
//! `T v = 1`.

use crate::error::{Error, Result};
use crate::model::{Grid, RateField, ScalarField};
pub use crate::tridiag::TridiagonalOperator;

/// Largest intensity multiplier accepted by the solvers. Beyond this the
/// boundary-layer profile sits below the double-precision floor.
pub const GAMMA_MAX: f64 = 1e5;

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    if gamma > GAMMA_MAX {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} exceeds the solver cap {GAMMA_MAX}"
        )));
    }
    Ok(())
}

pub fn assemble(lambda: f64, gamma: f64, v: &RateField, grid: &Grid) -> TridiagonalOperator {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = grid.n_interior();
    let off = -0.5 * inv_h2;
    TridiagonalOperator {
        sub: vec![off; n - 1],
        diag: v.values.iter().map(|&vi| inv_h2 + gamma * vi - lambda).collect(),
        sup: vec![off; n - 1],
        lambda,
    }
}

/// Solves for `u_{λ,γ}` (boundary value 1).
pub fn solve_u(lambda: f64, gamma: f64, v: &RateField, grid: &Grid) -> Result<ScalarField> {
    check_gamma(gamma)?;
    let t = assemble(lambda, gamma, v, grid);
    let n = grid.n_interior();
    let load = 0.5 / (grid.h() * grid.h());
    let mut rhs = vec![0.0; n];
    rhs[0] = load;
    rhs[n - 1] += load;
    let u = t.solve(&rhs)?;
    if lambda <= gamma * v.min_v {
        if let Some((i, bad)) = u
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x >= 0.0 && **x <= 1.0 + 1e-12))
        {
            return Err(Error::Discretization(format!(
                "u = {bad} at node {} violates 0 <= u <= 1 (lambda = {lambda}, gamma = {gamma})",
                i + 1
            )));
        }
    }
    Ok(ScalarField::new(u, 1.0, 1.0))
}

/// Solves for `v_{λ,γ}` (boundary value 0, unit source).
pub fn solve_v(lambda: f64, gamma: f64, v: &RateField, grid: &Grid) -> Result<ScalarField> {
    check_gamma(gamma)?;
    let t = assemble(lambda, gamma, v, grid);
    let sol = t.solve(&vec![1.0; grid.n_interior()])?;
    if lambda <= gamma * v.min_v {
        if let Some((i, bad)) = sol.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
            return Err(Error::Discretization(format!(
                "v = {bad} at node {} is not positive (lambda = {lambda}, gamma = {gamma})",
                i + 1
            )));
        }
    }
    Ok(ScalarField::new(sol, 0.0, 0.0))
}

/// Both profiles from a single factorization of `T(λ,γ)`.
pub fn solve_uv(
    lambda: f64,
    gamma: f64,
    v: &RateField,
    grid: &Grid,
) -> Result<(ScalarField, ScalarField)> {
    check_gamma(gamma)?;
    let t = assemble(lambda, gamma, v, grid);
    let lu = t.factor()?;
    let n = grid.n_interior();
    let load = 0.5 / (grid.h() * grid.h());
    let mut rhs = vec![0.0; n];
    rhs[0] = load;
    rhs[n - 1] += load;
    let u = lu.solve(&rhs);
    let w = lu.solve(&vec![1.0; n]);
    if !lu.all_pivots_positive() {
        return Err(Error::Singular { row: 0, lambda });
    }
    Ok((ScalarField::new(u, 1.0, 1.0), ScalarField::new(w, 0.0, 0.0)))
}

/// Exact `(u, v)` at `x` for constant rate `V₀`:
/// `u = cosh(κ(x-½))/cosh(κ/2)`, `v = (1-u)/(γV₀-λ)`, `κ = √(2(γV₀-λ))`.
pub fn closed_form_constant_v(lambda: f64, gamma: f64, v0: f64, x: f64) -> Result<(f64, f64)> {
    let a = gamma * v0 - lambda;
    if !(a > 0.0) || !(v0 > 0.0) {
        return Err(Error::OutOfDomain(format!(
            "closed form needs gamma*V0 > lambda, got gamma*V0 = {}, lambda = {lambda}",
            gamma * v0
        )));
    }
    let kappa = (2.0 * a).sqrt();
    let d = (x - 0.5).abs();
    // cosh ratio written with decaying exponentials only.
    let u = ((kappa * (d - 0.5)).exp() + (-kappa * (d + 0.5)).exp()) / (1.0 + (-kappa).exp());
    Ok((u, (1.0 - u) / a))
}

/// Inward normal derivatives `(+f'(0), -f'(1))` by one-sided second-order
/// differences.
pub fn boundary_normal_derivative(f: &ScalarField, grid: &Grid) -> (f64, f64) {
    let h = grid.h();
    let n = f.len();
    let d0 = (-3.0 * f.left + 4.0 * f.interior[0] - f.interior[1]) / (2.0 * h);
    let d1 = (-3.0 * f.right + 4.0 * f.interior[n - 1] - f.interior[n - 2]) / (2.0 * h);
    (d0, d1)
}
