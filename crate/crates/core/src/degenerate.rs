//! The degenerate rate `V(x) = 6x(1-x)` with Lebesgue redistribution, where
//! only `c₁γ^{1/3} ≤ λ₀ ≤ c₂γ^{2/3}` is known. Everything here is
//! exploratory: the fitted exponent has no reference value.

use serde::{Deserialize, Serialize};

use crate::asym::{self, SweepOptions, SweepResult};
use crate::eigen::{self, quadrature_weights, Method};
use crate::error::{Error, Result};
use crate::model::{Grid, JumpMeasure, MeasurePreset, RateField, RatePreset, ScalarField};

/// Nodes per `γ^{-1/3}` layer in degenerate sweeps.
pub const NODES_PER_LAYER: f64 = 100.0;
/// Proven exponent window `[1/3, 2/3]` widened by this amount.
pub const SLOPE_SLACK: f64 = 0.05;
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Smallest `γ` for which the test function's plateau is nonempty.
pub const MIN_TEST_GAMMA: f64 = 8.0;

pub fn degenerate_grid_size(base: usize, gamma: f64) -> usize {
    base.max(asym::MIN_SWEEP_NODES)
        .max((NODES_PER_LAYER * gamma.cbrt()).ceil() as usize)
}

/// The degenerate rate and Lebesgue measure on `grid`.
pub fn degenerate_fields(grid: &Grid) -> Result<(RateField, JumpMeasure)> {
    Ok((
        RateField::build(&RatePreset::Degenerate, grid)?,
        JumpMeasure::build(&MeasurePreset::Uniform, grid)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateSweep {
    pub sweep: SweepResult,
    /// Slopes of `log λ₀` between consecutive positive `γ`.
    pub local_slopes: Vec<f64>,
    pub slopes_in_window: bool,
    pub strictly_increasing: bool,
    pub c1_hat: f64,
    pub c2_hat: f64,
}

/// Matrix-route sweep of the degenerate problem; each `γ` gets
/// `max(base, 2000, 100 γ^{1/3})` interior nodes and Richardson extrapolation.
pub fn degenerate_sweep(gammas: &[f64], base: usize) -> Result<DegenerateSweep> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("gammas must be nonempty".into()));
    }
    let grid = Grid::new(base.max(3))?;
    let (v, mu) = degenerate_fields(&grid)?;
    let opts = SweepOptions {
        method: Method::Matrix,
        rel_tol: eigen::DEFAULT_REL_TOL,
        richardson: true,
    };
    let rows = asym::sweep_with_policy(
        gammas,
        &v,
        &mu,
        None,
        |g| degenerate_grid_size(base, g),
        opts,
    )?;
    let sweep = SweepResult::from_rows(rows, None);
    let positive: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.gamma > 0.0)
        .map(|r| (r.gamma.ln(), r.lambda0_richardson.ln()))
        .collect();
    let local_slopes: Vec<f64> = positive
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let (lo, hi) = (1.0 / 3.0 - SLOPE_SLACK, 2.0 / 3.0 + SLOPE_SLACK);
    let slopes_in_window = local_slopes.iter().all(|s| (lo..=hi).contains(s));
    let strictly_increasing = sweep
        .rows
        .windows(2)
        .all(|w| w[1].lambda0_richardson > w[0].lambda0_richardson);
    let (c1_hat, c2_hat) = bound_certificate(&sweep)?;
    Ok(DegenerateSweep {
        sweep,
        local_slopes,
        slopes_in_window,
        strictly_increasing,
        c1_hat,
        c2_hat,
    })
}

/// `(min λ₀γ^{-1/3}, max λ₀γ^{-2/3})` over the rows with `γ > 0`.
pub fn bound_certificate(sweep: &SweepResult) -> Result<(f64, f64)> {
    let rows: Vec<_> = sweep.rows.iter().filter(|r| r.gamma > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "bound certificate needs a row with gamma > 0".into(),
        ));
    }
    let c1 = rows
        .iter()
        .map(|r| r.lambda0_richardson * r.gamma.powf(-1.0 / 3.0))
        .fold(f64::INFINITY, f64::min);
    let c2 = rows
        .iter()
        .map(|r| r.lambda0_richardson * r.gamma.powf(-2.0 / 3.0))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((c1, c2))
}

fn check_test_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= MIN_TEST_GAMMA && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "test function needs gamma >= {MIN_TEST_GAMMA}, got {gamma}"
        )));
    }
    Ok(())
}

/// Junction `a = ½γ^{-1/3}` between the parabolic piece and the plateau.
pub fn junction(gamma: f64) -> f64 {
    0.5 / gamma.cbrt()
}

/// `u(x) = x - γ^{1/3}x²` on `[0,a]`, `u(a) = a/2` on `[a, 1-a]`, mirrored
/// on `[1-a, 1]`.
pub fn test_function_value(gamma: f64, x: f64) -> f64 {
    let a = junction(gamma);
    let y = x.min(1.0 - x);
    if y <= a {
        y - gamma.cbrt() * y * y
    } else {
        0.5 * a
    }
}

/// Exact `u''`: `-2γ^{1/3}` on the parabolic pieces, 0 on the plateau.
pub fn test_function_second_derivative(gamma: f64, x: f64) -> f64 {
    if x.min(1.0 - x) < junction(gamma) {
        -2.0 * gamma.cbrt()
    } else {
        0.0
    }
}

pub fn test_function(gamma: f64, grid: &Grid) -> Result<ScalarField> {
    check_test_gamma(gamma)?;
    Ok(ScalarField::from_fn(grid, |x| test_function_value(gamma, x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    /// `L u - c u ≥ 0` everywhere (certifies `λ₀ ≥ c`).
    Nonnegative,
    /// `L u - c u ≤ 0` everywhere.
    Nonpositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionReport {
    pub gamma: f64,
    pub c: f64,
    pub sign: Sign,
    /// `min R` for [`Sign::Nonnegative`], `max R` for [`Sign::Nonpositive`].
    pub extreme_residual: f64,
    /// Node where the extreme residual occurs.
    pub at: f64,
    pub holds: bool,
}

/// Evaluates `R = -½u'' + γV(u - ∫u dμ) - c u` for the test function at the
/// interior nodes of `grid`, skipping the node nearest to each junction.
pub fn supersolution_check_on(
    gamma: f64,
    c: f64,
    sign: Sign,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
) -> Result<SupersolutionReport> {
    let u = test_function(gamma, grid)?;
    let mean = quadrature_weights(mu, grid).integrate(&u);
    let a = junction(gamma);
    let h = grid.h();
    let skip = [(a / h).round() as usize, ((1.0 - a) / h).round() as usize];
    let mut best = match sign {
        Sign::Nonnegative => f64::INFINITY,
        Sign::Nonpositive => f64::NEG_INFINITY,
    };
    let mut at = f64::NAN;
    for (i, &x) in grid.nodes().iter().enumerate() {
        let j = i + 1;
        if skip.contains(&j) {
            continue;
        }
        let ux = u.interior[i];
        let r = -0.5 * test_function_second_derivative(gamma, x)
            + gamma * v.values[i] * (ux - mean)
            - c * ux;
        let better = match sign {
            Sign::Nonnegative => r < best,
            Sign::Nonpositive => r > best,
        };
        if better {
            best = r;
            at = x;
        }
    }
    let holds = match sign {
        Sign::Nonnegative => best >= 0.0,
        Sign::Nonpositive => best <= 0.0,
    };
    Ok(SupersolutionReport {
        gamma,
        c,
        sign,
        extreme_residual: best,
        at,
        holds,
    })
}

/// [`supersolution_check_on`] for the degenerate rate and Lebesgue measure
/// on a grid of `degenerate_grid_size(2000, γ)` nodes.
pub fn supersolution_check(gamma: f64, c: f64, sign: Sign) -> Result<SupersolutionReport> {
    check_test_gamma(gamma)?;
    let grid = Grid::new(degenerate_grid_size(asym::MIN_SWEEP_NODES, gamma))?;
    let (v, mu) = degenerate_fields(&grid)?;
    supersolution_check_on(gamma, c, sign, &v, &mu, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asym::SweepRow;

    #[test]
    fn test_function_examples() {
        let g = 1000.0;
        assert!((test_function_value(g, 0.05) - 0.025).abs() < 1e-15);
        for x in [0.05, 0.2, 0.5, 0.95] {
            assert!((test_function_value(g, x) - 0.025).abs() < 1e-15);
        }
        assert_eq!(test_function_value(g, 0.0), 0.0);
        assert_eq!(test_function_value(g, 1.0), 0.0);
        // u' = 1 - 2γ^{1/3}x vanishes at the junction.
        let a = junction(g);
        assert!((1.0 - 2.0 * g.cbrt() * a).abs() < 1e-15);
        let e = 1e-7;
        let left = (test_function_value(g, a) - test_function_value(g, a - e)) / e;
        assert!(left.abs() < 1e-5);
        let grid = Grid::new(1999).unwrap();
        assert!(test_function(7.0, &grid).is_err());
        let u = test_function(g, &grid).unwrap();
        assert_eq!((u.left, u.right), (0.0, 0.0));
    }

    #[test]
    fn quadrature_mean_matches_analytic() {
        let g = 1e6;
        let grid = Grid::new(degenerate_grid_size(2000, g)).unwrap();
        let (_, mu) = degenerate_fields(&grid).unwrap();
        let u = test_function(g, &grid).unwrap();
        let a = junction(g);
        let exact = 0.5 * a - a * a / 3.0;
        let q = quadrature_weights(&mu, &grid).integrate(&u);
        assert!((q - exact).abs() < 1e-8, "{q} {exact}");
    }

    #[test]
    fn lower_bound_construction_holds() {
        for g in [1e4, 1e5, 1e6] {
            let r = supersolution_check(g, DEFAULT_EPSILON * g.cbrt(), Sign::Nonnegative).unwrap();
            assert!(r.holds, "{r:?}");
        }
    }

    #[test]
    fn zero_shift_plateau_residual() {
        let g = 1e4;
        let grid = Grid::new(degenerate_grid_size(2000, g)).unwrap();
        let (v, mu) = degenerate_fields(&grid).unwrap();
        let r = supersolution_check_on(g, 0.0, Sign::Nonnegative, &v, &mu, &grid).unwrap();
        let u = test_function(g, &grid).unwrap();
        let mean = quadrature_weights(&mu, &grid).integrate(&u);
        let a = junction(g);
        // Minimum of γV(x)(u_plateau - ∫u dμ) over plateau nodes.
        let plateau_min = grid
            .nodes()
            .iter()
            .zip(&v.values)
            .filter(|(x, _)| x.min(1.0 - **x) > a + grid.h())
            .map(|(_, vx)| g * vx * (0.5 * a - mean))
            .fold(f64::INFINITY, f64::min);
        assert!(r.extreme_residual <= plateau_min + 1e-12);
        assert!(r.extreme_residual > 0.0);
    }

    fn row(gamma: f64, lambda: f64) -> SweepRow {
        SweepRow {
            gamma,
            h: 0.0,
            lambda0: lambda,
            lambda0_richardson: lambda,
            scaled: lambda,
            k: None,
            method: Method::Matrix,
            iterations: 0,
            residual: 0.0,
        }
    }

    #[test]
    fn bound_certificate_examples() {
        let gs = [8.0, 64.0, 512.0];
        let s = SweepResult::from_rows(gs.iter().map(|g| row(*g, g.sqrt())).collect(), None);
        let (c1, c2) = bound_certificate(&s).unwrap();
        assert!((c1 - 8f64.powf(1.0 / 6.0)).abs() < 1e-12);
        assert!((c2 - 8f64.powf(-1.0 / 6.0)).abs() < 1e-12);
        let one = SweepResult::from_rows(vec![row(27.0, 6.0)], None);
        let (c1, c2) = bound_certificate(&one).unwrap();
        assert!((c1 - 2.0).abs() < 1e-12 && (c2 - 6.0 / 9.0).abs() < 1e-12);
        let empty = SweepResult::from_rows(vec![], None);
        assert!(bound_certificate(&empty).is_err());
    }

    #[test]
    fn gamma_zero_is_dirichlet_laplacian() {
        let s = degenerate_sweep(&[0.0, 10.0], 2000).unwrap();
        let pi2 = std::f64::consts::PI.powi(2) / 2.0;
        assert!((s.sweep.rows[0].lambda0_richardson - pi2).abs() < 1e-6);
        assert!(s.strictly_increasing);
        assert!(degenerate_sweep(&[], 2000).is_err());
    }

    #[test]
    fn reflection_invariance() {
        let grid = Grid::new(2000).unwrap();
        let (v, mu) = degenerate_fields(&grid).unwrap();
        let (vr, mr) = (v.reflected(&grid).unwrap(), mu.reflected(&grid).unwrap());
        let a = eigen::principal_eigenvalue_matrix(500.0, &v, &mu, &grid, 1e-12).unwrap();
        let b = eigen::principal_eigenvalue_matrix(500.0, &vr, &mr, &grid, 1e-12).unwrap();
        assert!((a.lambda0 - b.lambda0).abs() <= 1e-12 * a.lambda0);
    }

    #[test]
    fn small_sweep_in_proven_window() {
        let s = degenerate_sweep(&[100.0, 400.0, 1600.0], 2000).unwrap();
        assert!(s.strictly_increasing);
        assert!(s.c1_hat > 0.0 && s.c2_hat > 0.0);
        assert_eq!(s.local_slopes.len(), 2);
        assert!(s.sweep.fit_exponent.is_some());
        assert!(s.sweep.rows.iter().all(|r| r.method == Method::Matrix));
    }
}
