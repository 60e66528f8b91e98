//! Large-γ behavior: limit constants, γ sweeps, power-law and
//! exponential-decay fits, and pointwise diagnostics of the boundary-layer
//! profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvp::{self, GAMMA_MAX};
use crate::eigen::{self, Method};
use crate::error::{Error, Result};
use crate::model::{Grid, JumpMeasure, Profile, RateField, VanishingOrder};

/// Nodes per boundary layer of width `γ^{-1/2}` required by sweeps.
pub const NODES_PER_LAYER: f64 = 40.0;
/// Smallest grid used by sweeps.
pub const MIN_SWEEP_NODES: usize = 2000;
/// Default interior margin for the `γv → 1/V` check.
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Large-γ limit of `γ^{(k-1)/2} λ₀(γ,μ)` on `(0,1)`, where the boundary
/// integrals reduce to sums over the two endpoints.
pub fn theoretical_limit_constant(k: usize, v: &RateField, mu: &JumpMeasure) -> Result<f64> {
    if v.is_degenerate() {
        return Err(Error::OutOfHypothesis(
            "limit constants need V > 0 on the closed interval".into(),
        ));
    }
    match mu.k_vanish {
        VanishingOrder::Finite(kv) if kv == k => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "vanishing order {k} does not match the measure's declared order {other:?}"
            )))
        }
    }
    let density = mu.density.as_ref().ok_or_else(|| {
        Error::InvalidArgument("limit constants need a density near the boundary".into())
    })?;
    let d = density.endpoint_derivs.get(k).ok_or_else(|| {
        Error::InvalidArgument(format!("density derivative of order {k} not available"))
    })?;
    // Inward normal is +d/dx at 0 and -d/dx at 1; only odd orders see the sign.
    let t1 = if k % 2 == 1 { -d[1] } else { d[1] };
    let power = -((k + 1) as f64) / 2.0;
    let numerator = v.endpoint_values[0].powf(power) * d[0] + v.endpoint_values[1].powf(power) * t1;
    let denominator = 2f64.powf((k + 1) as f64 / 2.0) * inverse_rate_integral(v, mu);
    Ok(numerator / denominator)
}

/// `∫ (1/V) dμ`: composite Simpson on the analytic profiles plus atoms.
pub fn inverse_rate_integral(v: &RateField, mu: &JumpMeasure) -> f64 {
    let atoms: f64 = mu.atoms.iter().map(|a| a.mass / v.eval(a.location)).sum();
    let dens = mu.density.as_ref().map_or(0.0, |d| {
        let m = match d.profile() {
            Profile::Tabulated(s) => 4 * (s.len() - 1),
            Profile::Polynomial(_) => 1 << 16,
        };
        let h = 1.0 / m as f64;
        let f = |x: f64| d.eval(x) / v.eval(x);
        let mut s = f(0.0) + f(1.0);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    });
    atoms + dens
}

/// Interior node count used for a sweep point.
pub fn sweep_grid_size(base: usize, gamma: f64) -> usize {
    base.max(MIN_SWEEP_NODES)
        .max((NODES_PER_LAYER * gamma.sqrt()).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub h: f64,
    pub lambda0: f64,
    pub lambda0_richardson: f64,
    pub scaled: f64,
    /// `None` for measures without a density at the boundary.
    pub k: Option<usize>,
    pub method: Method,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub fit_exponent: Option<f64>,
    pub fit_constant: Option<f64>,
    pub local_slopes: Vec<f64>,
    pub limit_constant: Option<f64>,
    pub extrapolated_intercept: Option<f64>,
}

impl SweepResult {
    pub fn gammas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gamma).collect()
    }

    pub fn lambda0s(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda0_richardson).collect()
    }

    pub fn scaled(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.scaled).collect()
    }

    pub(crate) fn from_rows(rows: Vec<SweepRow>, limit_constant: Option<f64>) -> Self {
        let gammas: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
        let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda0_richardson).collect();
        let fit = fit_power_law(&gammas, &lambdas).ok();
        let mut out = Self {
            local_slopes: fit.as_ref().map(|f| f.local_slopes.clone()).unwrap_or_default(),
            fit_exponent: fit.as_ref().map(|f| f.exponent),
            fit_constant: fit.as_ref().map(|f| f.constant),
            rows,
            limit_constant,
            extrapolated_intercept: None,
        };
        out.extrapolated_intercept = fit_corrected_limit(&out).ok();
        out
    }
}

/// Scaling `γ^{(k-1)/2}` for vanishing order `k` (identity for atoms).
pub fn scaling(gamma: f64, k: Option<usize>) -> f64 {
    match k {
        Some(k) => gamma.powf((k as f64 - 1.0) / 2.0),
        None => 1.0,
    }
}

/// Sweep options shared by the non-degenerate and degenerate explorers.
#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub method: Method,
    pub rel_tol: f64,
    pub richardson: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            method: Method::FixedPoint,
            rel_tol: eigen::DEFAULT_REL_TOL,
            richardson: true,
        }
    }
}

/// `λ₀` at each `γ`, each on its own grid from `grid_size(γ)`.
pub(crate) fn sweep_with_policy(
    gammas: &[f64],
    v: &RateField,
    mu: &JumpMeasure,
    k: Option<usize>,
    grid_size: impl Fn(f64) -> usize + Sync,
    opts: SweepOptions,
) -> Result<Vec<SweepRow>> {
    if gammas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("gammas must be strictly increasing".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0 && **g <= GAMMA_MAX)) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {g} outside [0, {GAMMA_MAX}]"
        )));
    }
    gammas
        .par_iter()
        .map(|&gamma| {
            let run = || -> Result<SweepRow> {
                let grid = Grid::new(grid_size(gamma))?;
                let vg = v.resample(&grid)?;
                let mg = mu.resample(&grid)?;
                let (res, extrapolated) = if opts.richardson {
                    let r = eigen::principal_eigenvalue_richardson(
                        opts.method,
                        gamma,
                        &vg,
                        &mg,
                        &grid,
                        opts.rel_tol,
                    )?;
                    let e = r.extrapolated;
                    (r.coarse, e)
                } else {
                    let r = eigen::principal_eigenvalue(
                        opts.method,
                        gamma,
                        &vg,
                        &mg,
                        &grid,
                        opts.rel_tol,
                    )?;
                    let e = r.lambda0;
                    (r, e)
                };
                Ok(SweepRow {
                    gamma,
                    h: grid.h(),
                    lambda0: res.lambda0,
                    lambda0_richardson: extrapolated,
                    scaled: scaling(gamma, k) * extrapolated,
                    k,
                    method: res.method,
                    iterations: res.iterations,
                    residual: res.residual,
                })
            };
            run().map_err(|e| e.at_gamma(gamma))
        })
        .collect()
}

/// `λ₀(γ)` over `gammas` with Richardson extrapolation, grids sized by
/// [`sweep_grid_size`] from `grid`, and fits of the resulting table.
pub fn sweep_gamma(
    gammas: &[f64],
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    opts: SweepOptions,
) -> Result<SweepResult> {
    let k = mu.k_vanish.finite();
    let base = grid.n_interior();
    let rows = sweep_with_policy(gammas, v, mu, k, |g| sweep_grid_size(base, g), opts)?;
    let limit = k.and_then(|k| theoretical_limit_constant(k, v, mu).ok());
    Ok(SweepResult::from_rows(rows, limit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub constant: f64,
    /// Largest absolute misfit in `log λ`.
    pub residual: f64,
    /// `Δ log λ / Δ log γ` between consecutive points.
    pub local_slopes: Vec<f64>,
}

/// Ordinary least squares `y = a + b x`, returning `(a, b, r²)`.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate design: abscissae are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((intercept, slope, r2))
}

fn check_positive(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive, got {x}"
        )));
    }
    Ok(())
}

/// Least squares of `log λ` on `log γ`.
pub fn fit_power_law(gammas: &[f64], lambdas: &[f64]) -> Result<PowerLawFit> {
    if gammas.len() != lambdas.len() || gammas.len() < 3 {
        return Err(Error::InvalidArgument(
            "power-law fit needs at least 3 paired points".into(),
        ));
    }
    check_positive("gammas", gammas)?;
    check_positive("lambdas", lambdas)?;
    let lx: Vec<f64> = gammas.iter().map(|g| g.ln()).collect();
    let ly: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let (a, b, _) = linear_fit(&lx, &ly)?;
    let residual = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - a - b * x).abs())
        .fold(0.0, f64::max);
    let local_slopes = lx
        .windows(2)
        .zip(ly.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    Ok(PowerLawFit {
        exponent: b,
        constant: a.exp(),
        residual,
        local_slopes,
    })
}

/// Intercept `c` of the least-squares model `scaled = c + a γ^{-1/2}`.
pub fn fit_corrected_limit(sweep: &SweepResult) -> Result<f64> {
    fit_corrected_limit_points(&sweep.gammas(), &sweep.scaled())
}

pub fn fit_corrected_limit_points(gammas: &[f64], scaled: &[f64]) -> Result<f64> {
    if gammas.len() != scaled.len() || gammas.len() < 3 {
        return Err(Error::InvalidArgument(
            "corrected-limit fit needs at least 3 points".into(),
        ));
    }
    check_positive("gammas", gammas)?;
    let x: Vec<f64> = gammas.iter().map(|g| g.powf(-0.5)).collect();
    Ok(linear_fit(&x, scaled)?.0)
}

/// Regression of `log λ` on `√γ`; returns `(c_hat, r²)` with slope `-c_hat`.
pub fn exponential_decay_fit(gammas: &[f64], lambdas: &[f64]) -> Result<(f64, f64)> {
    if gammas.len() != lambdas.len() || gammas.len() < 4 {
        return Err(Error::InvalidArgument(
            "exponential-decay fit needs at least 4 paired points".into(),
        ));
    }
    check_positive("lambdas", lambdas)?;
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {g}")));
    }
    let x: Vec<f64> = gammas.iter().map(|g| g.sqrt()).collect();
    let y: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let (_, slope, r2) = linear_fit(&x, &y)?;
    Ok((-slope, r2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLayerDiagnostics {
    pub gamma: f64,
    pub lambda0: f64,
    /// `sup |γ v_{λ₀,γ} - 1/V|` over nodes in `[ε, 1-ε]`.
    pub v_limit_sup: f64,
    /// `|γ^{-1/2} ∂_n u + √(2V(b))|` at `b = 0` and `b = 1`.
    pub normal_deriv_errs: [f64; 2],
    pub sublinearity_ratio: f64,
}

pub fn boundary_layer_diagnostics(
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    grid: &Grid,
    margin: f64,
) -> Result<BoundaryLayerDiagnostics> {
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "interior margin must lie in (0, 1/2), got {margin}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diagnostics need gamma > 0, got {gamma}"
        )));
    }
    let res = eigen::principal_eigenvalue(
        Method::FixedPoint,
        gamma,
        v,
        mu,
        grid,
        eigen::DEFAULT_REL_TOL,
    )?;
    let (u, w) = match (&res.u_profile, &res.v_profile) {
        (Some(u), Some(w)) => (u.clone(), w.clone()),
        _ => bvp::solve_uv(res.lambda0, gamma, v, grid)?,
    };
    let v_limit_sup = grid
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= margin && x <= 1.0 - margin)
        .map(|(i, _)| (gamma * w.interior[i] - 1.0 / v.values[i]).abs())
        .fold(0.0, f64::max);
    let (d0, d1) = bvp::boundary_normal_derivative(&u, grid);
    let s = gamma.sqrt();
    let normal_deriv_errs = [
        (d0 / s + (2.0 * v.endpoint_values[0]).sqrt()).abs(),
        (d1 / s + (2.0 * v.endpoint_values[1]).sqrt()).abs(),
    ];
    Ok(BoundaryLayerDiagnostics {
        gamma,
        lambda0: res.lambda0,
        v_limit_sup,
        normal_deriv_errs,
        sublinearity_ratio: res.lambda0 / gamma,
    })
}
