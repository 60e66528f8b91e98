//! Grid, rate field and jump measure on the unit interval.
//!
//! Every value here is immutable once built. Fields are sampled on a
//! [`Grid`] but keep their analytic profile so they can be resampled on a
//! refined grid (Richardson extrapolation) or evaluated at arbitrary points
//! (Monte Carlo).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the unit-mass normalizations of `V` and `μ`.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Number of intervals of the mesh used to validate `∫V dx = 1` for
/// analytic profiles. Independent of the solve grid.
const VALIDATION_INTERVALS: usize = 1 << 17;

/// Uniform mesh of `(0,1)`; only interior nodes are unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_interior: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 interior nodes, got {n_interior}"
            )));
        }
        let h = 1.0 / (n_interior as f64 + 1.0);
        let nodes = (1..=n_interior).map(|i| i as f64 * h).collect();
        Ok(Self {
            n_interior,
            h,
            nodes,
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Grid with half the spacing (`2n + 1` interior nodes).
    pub fn refined(&self) -> Self {
        Self::new(2 * self.n_interior + 1).expect("refining a valid grid")
    }

    /// Coordinate of node `j` counting the boundary: `j = 0` is `x = 0`,
    /// `j = n + 1` is `x = 1`.
    pub fn coordinate(&self, j: usize) -> f64 {
        if j == self.n_interior + 1 {
            1.0
        } else {
            j as f64 * self.h
        }
    }
}

/// Values on interior nodes plus the two boundary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub interior: Vec<f64>,
    pub left: f64,
    pub right: f64,
}

impl ScalarField {
    pub fn new(interior: Vec<f64>, left: f64, right: f64) -> Self {
        Self {
            interior,
            left,
            right,
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            interior: grid.nodes().iter().map(|&x| f(x)).collect(),
            left: f(0.0),
            right: f(1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Value at node `j` counting the boundary (see [`Grid::coordinate`]).
    pub fn at(&self, j: usize) -> f64 {
        let n = self.interior.len();
        match j {
            0 => self.left,
            j if j == n + 1 => self.right,
            j => self.interior[j - 1],
        }
    }

    /// Mirror image under `x ↦ 1 - x`.
    pub fn reflected(&self) -> Self {
        let mut interior = self.interior.clone();
        interior.reverse();
        Self {
            interior,
            left: self.right,
            right: self.left,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.interior
            .iter()
            .chain([&self.left, &self.right])
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Dense polynomial `Σ c_j x^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::constant(0.0);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &c)| j as f64 * c)
                .collect(),
        )
    }

    pub fn nth_derivative(&self, order: usize) -> Self {
        (0..order).fold(self.clone(), |p, _| p.derivative())
    }

    /// `∫₀¹ p dx`, exact.
    pub fn integral_unit(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| c / (j as f64 + 1.0))
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new(
            (0..n)
                .map(|j| {
                    self.coeffs.get(j).copied().unwrap_or(0.0)
                        + other.coeffs.get(j).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    /// `x^k (1-x)^k`.
    pub fn bump(k: usize) -> Self {
        let one_minus_x = Self::new(vec![1.0, -1.0]);
        let x = Self::new(vec![0.0, 1.0]);
        let xk1k = x.mul(&one_minus_x);
        (0..k).fold(Self::constant(1.0), |p, _| p.mul(&xk1k))
    }
}

/// Function on `[0,1]`: either an analytic polynomial or samples on a
/// uniform mesh including both endpoints (linearly interpolated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Polynomial(Polynomial),
    Tabulated(Vec<f64>),
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Polynomial(p) => p.eval(x),
            Profile::Tabulated(v) => {
                let m = v.len() - 1;
                let s = (x.clamp(0.0, 1.0)) * m as f64;
                let j = (s.floor() as usize).min(m - 1);
                let t = s - j as f64;
                (1.0 - t) * v[j] + t * v[j + 1]
            }
        }
    }

    /// Derivatives of order `0..=max_order` at `x = 0` and `x = 1`.
    /// Tabulated profiles use one-sided fourth-order differences.
    pub fn endpoint_derivatives(&self, max_order: usize) -> Vec<[f64; 2]> {
        match self {
            Profile::Polynomial(p) => (0..=max_order)
                .map(|j| {
                    let d = p.nth_derivative(j);
                    [d.eval(0.0), d.eval(1.0)]
                })
                .collect(),
            Profile::Tabulated(v) => {
                let m = v.len() - 1;
                let h = 1.0 / m as f64;
                (0..=max_order)
                    .map(|j| {
                        if j == 0 {
                            return [v[0], v[m]];
                        }
                        let npts = (j + 4).min(v.len());
                        let offsets: Vec<f64> = (0..npts).map(|i| i as f64).collect();
                        let w = fornberg_weights(0.0, &offsets, j);
                        let scale = h.powi(j as i32);
                        let left: f64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                        // At x = 1 the stencil runs inward, so odd orders flip sign.
                        let right: f64 = w.iter().zip(v.iter().rev()).map(|(a, b)| a * b).sum();
                        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
                        [left / scale, sign * right / scale]
                    })
                    .collect()
            }
        }
    }

    fn integral_unit(&self) -> f64 {
        match self {
            Profile::Polynomial(p) => p.integral_unit(),
            Profile::Tabulated(v) => trapezoid_samples(v),
        }
    }

    fn validation_integral(&self) -> f64 {
        match self {
            Profile::Polynomial(_) => {
                let m = VALIDATION_INTERVALS;
                let samples: Vec<f64> = (0..=m).map(|i| self.eval(i as f64 / m as f64)).collect();
                trapezoid_samples(&samples)
            }
            Profile::Tabulated(v) => trapezoid_samples(v),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        let samples: Vec<f64> = match self {
            Profile::Polynomial(_) => {
                let m = 1 << 14;
                (0..=m).map(|i| self.eval(i as f64 / m as f64)).collect()
            }
            Profile::Tabulated(v) => v.clone(),
        };
        samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn trapezoid_samples(v: &[f64]) -> f64 {
    let m = v.len() - 1;
    let h = 1.0 / m as f64;
    let inner: f64 = v[1..m].iter().sum();
    h * (inner + 0.5 * (v[0] + v[m]))
}

/// Finite-difference weights for the `order`-th derivative at `x0` over the
/// stencil `xs` (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// Rate profile presets. Polynomial coefficients are in powers of `x` and
/// are normalized to unit integral before sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatePreset {
    Constant,
    Linear { slope: f64 },
    Polynomial { coeffs: Vec<f64> },
    /// `6x(1-x)`, vanishing at both endpoints.
    Degenerate,
    /// Samples on a uniform mesh including both endpoints.
    Tabulated { values: Vec<f64> },
}

/// Jump intensity profile `V`, normalized so that `∫V dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateField {
    pub values: Vec<f64>,
    pub endpoint_values: [f64; 2],
    /// `[V', V'']` at `x = 0` and at `x = 1`.
    pub endpoint_derivs: [[f64; 2]; 2],
    pub min_v: f64,
    pub max_v: f64,
    pub degenerate_ok: bool,
    profile: Profile,
}

impl RateField {
    pub fn build(preset: &RatePreset, grid: &Grid) -> Result<Self> {
        let (profile, degenerate_ok) = match preset {
            RatePreset::Constant => (Profile::Polynomial(Polynomial::constant(1.0)), false),
            RatePreset::Linear { slope } => {
                if !slope.is_finite() || slope.abs() >= 2.0 {
                    return Err(Error::InvalidRate(format!(
                        "linear slope must satisfy |a| < 2, got {slope}"
                    )));
                }
                (
                    Profile::Polynomial(Polynomial::new(vec![1.0 - 0.5 * slope, *slope])),
                    false,
                )
            }
            RatePreset::Polynomial { coeffs } => {
                let p = Polynomial::new(coeffs.clone());
                let total = p.integral_unit();
                if !(total.is_finite() && total > 0.0) {
                    return Err(Error::InvalidRate(format!(
                        "polynomial has non-positive integral {total}"
                    )));
                }
                (Profile::Polynomial(p.scaled(1.0 / total)), false)
            }
            RatePreset::Degenerate => (
                Profile::Polynomial(Polynomial::new(vec![0.0, 6.0, -6.0])),
                true,
            ),
            RatePreset::Tabulated { values } => {
                if values.len() < 6 {
                    return Err(Error::InvalidRate(
                        "tabulated rate needs at least 6 samples".into(),
                    ));
                }
                (Profile::Tabulated(values.clone()), false)
            }
        };
        Self::from_profile(profile, degenerate_ok, grid)
    }

    fn from_profile(profile: Profile, degenerate_ok: bool, grid: &Grid) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().iter().map(|&x| profile.eval(x)).collect();
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::InvalidRate(format!(
                "V = {v} at interior node {} (x = {})",
                i + 1,
                grid.nodes()[i]
            )));
        }
        let endpoint_values = [profile.eval(0.0), profile.eval(1.0)];
        if !degenerate_ok && endpoint_values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidRate(format!(
                "V must be positive at the endpoints, got {endpoint_values:?}"
            )));
        }
        let integral = profile.validation_integral();
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidRate(format!(
                "normalization violated: integral of V = {integral}"
            )));
        }
        let d = profile.endpoint_derivatives(2);
        let (min_v, max_v) = profile.bounds();
        Ok(Self {
            values,
            endpoint_values,
            endpoint_derivs: [[d[1][0], d[2][0]], [d[1][1], d[2][1]]],
            min_v: min_v.max(0.0),
            max_v,
            degenerate_ok,
            profile,
        })
    }

    /// Same profile sampled on another grid.
    pub fn resample(&self, grid: &Grid) -> Result<Self> {
        Self::from_profile(self.profile.clone(), self.degenerate_ok, grid)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.profile.eval(x)
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// True when `V` vanishes somewhere on the closed interval.
    pub fn is_degenerate(&self) -> bool {
        self.endpoint_values.iter().any(|v| *v <= 0.0) || self.min_v <= 0.0
    }

    pub fn is_symmetric(&self) -> bool {
        self.values
            .iter()
            .zip(self.values.iter().rev())
            .all(|(a, b)| (a - b).abs() <= 1e-14 * a.abs().max(1.0))
            && (self.endpoint_values[0] - self.endpoint_values[1]).abs() <= 1e-14
    }

    /// Mirror image under `x ↦ 1 - x`.
    pub fn reflected(&self, grid: &Grid) -> Result<Self> {
        let profile = match &self.profile {
            Profile::Polynomial(p) => {
                // p(1 - x) via Horner on polynomials.
                let one_minus_x = Polynomial::new(vec![1.0, -1.0]);
                let q = p
                    .coeffs()
                    .iter()
                    .rev()
                    .fold(Polynomial::constant(0.0), |acc, &c| {
                        acc.mul(&one_minus_x).add(&Polynomial::constant(c))
                    });
                Profile::Polynomial(q)
            }
            Profile::Tabulated(v) => Profile::Tabulated(v.iter().rev().copied().collect()),
        };
        Self::from_profile(profile, self.degenerate_ok, grid)
    }
}

/// Jump measure presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurePreset {
    Uniform,
    /// Density `c_k x^k (1-x)^k` with unit mass.
    Poly { k: usize },
    Atom { location: f64 },
    Mixture { components: Vec<MixtureComponent> },
    /// Density samples on a uniform mesh including both endpoints, with the
    /// declared vanishing order.
    Tabulated { values: Vec<f64>, k_vanish: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub mass: f64,
    pub measure: MeasurePreset,
}

/// Order to which the density vanishes at the boundary. Pure atomic
/// measures have no density there at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VanishingOrder {
    Finite(usize),
    Infinite,
}

impl VanishingOrder {
    pub fn finite(self) -> Option<usize> {
        match self {
            VanishingOrder::Finite(k) => Some(k),
            VanishingOrder::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub values: Vec<f64>,
    pub endpoint_values: [f64; 2],
    /// `μ^(j)(0), μ^(j)(1)` for `j = 0..=k_max`.
    pub endpoint_derivs: Vec<[f64; 2]>,
    pub mass: f64,
    profile: Profile,
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        self.profile.eval(x)
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }
}

/// Probability measure `μ` on `(0,1)`: a density part plus atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    pub density: Option<Density>,
    pub atoms: Vec<Atom>,
    pub k_vanish: VanishingOrder,
}

/// Derivative orders stored beyond the vanishing order.
const EXTRA_DERIV_ORDERS: usize = 2;

impl JumpMeasure {
    pub fn build(preset: &MeasurePreset, grid: &Grid) -> Result<Self> {
        let (density, atoms, k_vanish) = Self::components(preset, 1.0)?;
        let total: f64 = density.as_ref().map_or(0.0, |p| p.integral_unit())
            + atoms.iter().map(|a| a.mass).sum::<f64>();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass must be 1, got {total}"
            )));
        }
        Self::assemble(density, atoms, k_vanish, grid)
    }

    fn components(
        preset: &MeasurePreset,
        weight: f64,
    ) -> Result<(Option<Profile>, Vec<Atom>, VanishingOrder)> {
        match preset {
            MeasurePreset::Uniform => Ok((
                Some(Profile::Polynomial(Polynomial::constant(weight))),
                vec![],
                VanishingOrder::Finite(0),
            )),
            MeasurePreset::Poly { k } => {
                let p = Polynomial::bump(*k);
                let norm = p.integral_unit();
                Ok((
                    Some(Profile::Polynomial(p.scaled(weight / norm))),
                    vec![],
                    VanishingOrder::Finite(*k),
                ))
            }
            MeasurePreset::Atom { location } => {
                if !(*location > 0.0 && *location < 1.0) {
                    return Err(Error::InvalidMeasure(
                        "atom location must lie in (0,1)".into(),
                    ));
                }
                Ok((
                    None,
                    vec![Atom {
                        location: *location,
                        mass: weight,
                    }],
                    VanishingOrder::Infinite,
                ))
            }
            MeasurePreset::Tabulated { values, k_vanish } => {
                if values.len() < 8 {
                    return Err(Error::InvalidMeasure(
                        "tabulated density needs at least 8 samples".into(),
                    ));
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidMeasure("density must be nonnegative".into()));
                }
                let scaled: Vec<f64> = values.iter().map(|v| v * weight).collect();
                Ok((
                    Some(Profile::Tabulated(scaled)),
                    vec![],
                    VanishingOrder::Finite(*k_vanish),
                ))
            }
            MeasurePreset::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidMeasure("mixture has no components".into()));
                }
                let masses: f64 = components.iter().map(|c| c.mass).sum();
                if components.iter().any(|c| !(c.mass > 0.0))
                    || (masses - 1.0).abs() > NORMALIZATION_TOL
                {
                    return Err(Error::InvalidMeasure(format!(
                        "mixture masses must be positive and sum to 1, got {masses}"
                    )));
                }
                let mut density: Option<Profile> = None;
                let mut atoms = Vec::new();
                let mut k = VanishingOrder::Infinite;
                for c in components {
                    let (d, a, kc) = Self::components(&c.measure, weight * c.mass)?;
                    atoms.extend(a);
                    if let Some(p) = d {
                        density = Some(match (density, p) {
                            (None, p) => p,
                            (Some(Profile::Polynomial(a)), Profile::Polynomial(b)) => {
                                Profile::Polynomial(a.add(&b))
                            }
                            (Some(a), b) => tabulated_sum(&a, &b),
                        });
                        k = match (k, kc) {
                            (VanishingOrder::Finite(x), VanishingOrder::Finite(y)) => {
                                VanishingOrder::Finite(x.min(y))
                            }
                            (VanishingOrder::Infinite, o) | (o, VanishingOrder::Infinite) => o,
                        };
                    }
                }
                Ok((density, atoms, k))
            }
        }
    }

    fn assemble(
        density: Option<Profile>,
        atoms: Vec<Atom>,
        k_vanish: VanishingOrder,
        grid: &Grid,
    ) -> Result<Self> {
        for a in &atoms {
            if !(a.location > 0.0 && a.location < 1.0) {
                return Err(Error::InvalidMeasure(
                    "atom location must lie in (0,1)".into(),
                ));
            }
        }
        let density = match density {
            None => None,
            Some(profile) => {
                let k = k_vanish.finite().unwrap_or(0);
                let mut derivs = profile.endpoint_derivatives(k + EXTRA_DERIV_ORDERS);
                // Orders below k vanish by declaration; anything left is rounding
                // (polynomial expansion) or truncation (tabulated data).
                let scale = derivs[k][0].abs().max(derivs[k][1].abs()).max(1.0);
                for (j, d) in derivs.iter_mut().enumerate().take(k) {
                    if d.iter().any(|v| v.abs() > 1e-6 * scale) {
                        return Err(Error::InvalidMeasure(format!(
                            "declared vanishing order {k} but derivative {j} is {d:?}"
                        )));
                    }
                    *d = [0.0, 0.0];
                }
                let values: Vec<f64> = grid.nodes().iter().map(|&x| profile.eval(x)).collect();
                if values.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidMeasure("density must be nonnegative".into()));
                }
                let mass = profile.integral_unit();
                Some(Density {
                    values,
                    endpoint_values: [profile.eval(0.0), profile.eval(1.0)],
                    endpoint_derivs: derivs,
                    mass,
                    profile,
                })
            }
        };
        Ok(Self {
            density,
            atoms,
            k_vanish,
        })
    }

    pub fn resample(&self, grid: &Grid) -> Result<Self> {
        Self::assemble(
            self.density.as_ref().map(|d| d.profile.clone()),
            self.atoms.clone(),
            self.k_vanish,
            grid,
        )
    }

    pub fn reflected(&self, grid: &Grid) -> Result<Self> {
        let density = self.density.as_ref().map(|d| match &d.profile {
            Profile::Polynomial(p) => {
                let one_minus_x = Polynomial::new(vec![1.0, -1.0]);
                Profile::Polynomial(p.coeffs().iter().rev().fold(
                    Polynomial::constant(0.0),
                    |acc, &c| acc.mul(&one_minus_x).add(&Polynomial::constant(c)),
                ))
            }
            Profile::Tabulated(v) => Profile::Tabulated(v.iter().rev().copied().collect()),
        });
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                location: 1.0 - a.location,
                mass: a.mass,
            })
            .collect();
        Self::assemble(density, atoms, self.k_vanish, grid)
    }

    pub fn total_mass(&self) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.mass) + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    pub fn density_mass(&self) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.mass)
    }

    pub fn is_symmetric(&self) -> bool {
        let dens = self.density.as_ref().is_none_or(|d| {
            (0..=64).all(|i| {
                let x = i as f64 / 128.0;
                (d.eval(x) - d.eval(1.0 - x)).abs() <= 1e-12 * d.eval(x).abs().max(1.0)
            })
        });
        let atoms = self.atoms.iter().all(|a| {
            self.atoms.iter().any(|b| {
                (b.location - (1.0 - a.location)).abs() < 1e-15 && (b.mass - a.mass).abs() < 1e-15
            })
        });
        dens && atoms
    }
}

fn tabulated_sum(a: &Profile, b: &Profile) -> Profile {
    let m = match (a, b) {
        (Profile::Tabulated(v), _) | (_, Profile::Tabulated(v)) => v.len() - 1,
        _ => unreachable!("polynomial sums are handled analytically"),
    };
    Profile::Tabulated(
        (0..=m)
            .map(|i| {
                let x = i as f64 / m as f64;
                a.eval(x) + b.eval(x)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = Grid::new(3).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.nodes(), &[0.25, 0.5, 0.75]);
        let g = Grid::new(999).unwrap();
        assert!((g.h() - 0.001).abs() < 1e-18);
        assert!(matches!(Grid::new(1), Err(Error::InvalidArgument(_))));
        assert!(Grid::new(2).is_err());
    }

    #[test]
    fn grid_invariants() {
        for n in [3, 10, 999, 2000, 4097] {
            let g = Grid::new(n).unwrap();
            assert!((g.h() * (n as f64 + 1.0) - 1.0).abs() <= f64::EPSILON);
            assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
            assert!(g.nodes()[0] > 0.0 && *g.nodes().last().unwrap() < 1.0);
            assert_eq!(g.refined().n_interior(), 2 * n + 1);
        }
    }

    #[test]
    fn constant_rate() {
        let g = Grid::new(50).unwrap();
        let v = RateField::build(&RatePreset::Constant, &g).unwrap();
        assert!(v.values.iter().all(|&x| x == 1.0));
        assert_eq!((v.min_v, v.max_v), (1.0, 1.0));
        assert!(!v.is_degenerate());
    }

    #[test]
    fn linear_rate() {
        let g = Grid::new(50).unwrap();
        let v = RateField::build(&RatePreset::Linear { slope: 0.5 }, &g).unwrap();
        assert_eq!(v.endpoint_values, [0.75, 1.25]);
        assert!((v.eval(0.3) - (1.0 + 0.5 * (0.3 - 0.5))).abs() < 1e-15);
        assert_eq!(v.endpoint_derivs, [[0.5, 0.0], [0.5, 0.0]]);
        assert!(RateField::build(&RatePreset::Linear { slope: 2.0 }, &g).is_err());
        assert!(RateField::build(&RatePreset::Linear { slope: -2.5 }, &g).is_err());
    }

    #[test]
    fn degenerate_rate() {
        let g = Grid::new(99).unwrap();
        let v = RateField::build(&RatePreset::Degenerate, &g).unwrap();
        assert_eq!(v.endpoint_values, [0.0, 0.0]);
        assert!((v.max_v - 1.5).abs() < 1e-12);
        assert!(v.degenerate_ok && v.is_degenerate());
        assert!(v.values.iter().all(|&x| x > 0.0));
        assert!(v.is_symmetric());
    }

    #[test]
    fn polynomial_rate_is_normalized() {
        let g = Grid::new(40).unwrap();
        let v = RateField::build(
            &RatePreset::Polynomial {
                coeffs: vec![2.0, 1.0, 3.0],
            },
            &g,
        )
        .unwrap();
        // 2 + x + 3x^2 integrates to 3.5.
        assert!((v.eval(0.0) - 2.0 / 3.5).abs() < 1e-15);
        // Vanishing polynomial without the degenerate flag is rejected.
        let e = RateField::build(
            &RatePreset::Polynomial {
                coeffs: vec![0.0, 1.0, -1.0],
            },
            &g,
        );
        assert!(matches!(e, Err(Error::InvalidRate(_))));
    }

    #[test]
    fn tabulated_rate_must_be_normalized() {
        let g = Grid::new(20).unwrap();
        let ok = RateField::build(&RatePreset::Tabulated { values: vec![1.0; 11] }, &g).unwrap();
        assert!(ok.endpoint_derivs.iter().flatten().all(|d| d.abs() < 1e-10));
        let bad = RateField::build(&RatePreset::Tabulated { values: vec![1.1; 11] }, &g);
        assert!(matches!(bad, Err(Error::InvalidRate(_))));
    }

    #[test]
    fn uniform_measure() {
        let g = Grid::new(20).unwrap();
        let m = JumpMeasure::build(&MeasurePreset::Uniform, &g).unwrap();
        let d = m.density.as_ref().unwrap();
        assert_eq!(d.endpoint_values, [1.0, 1.0]);
        assert_eq!(m.k_vanish, VanishingOrder::Finite(0));
        assert!((m.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn poly_measures() {
        let g = Grid::new(20).unwrap();
        let m1 = JumpMeasure::build(&MeasurePreset::Poly { k: 1 }, &g).unwrap();
        let d1 = m1.density.unwrap();
        assert!((d1.eval(0.5) - 1.5).abs() < 1e-14);
        assert_eq!(d1.endpoint_derivs[0], [0.0, 0.0]);
        assert!((d1.endpoint_derivs[1][0] - 6.0).abs() < 1e-12);
        assert!((d1.endpoint_derivs[1][1] + 6.0).abs() < 1e-12);
        assert_eq!(m1.k_vanish, VanishingOrder::Finite(1));

        let d2 = JumpMeasure::build(&MeasurePreset::Poly { k: 2 }, &g)
            .unwrap()
            .density
            .unwrap();
        assert!((d2.endpoint_derivs[2][0] - 60.0).abs() < 1e-10);
        assert!((d2.endpoint_derivs[2][1] - 60.0).abs() < 1e-10);

        let d3 = JumpMeasure::build(&MeasurePreset::Poly { k: 3 }, &g)
            .unwrap()
            .density
            .unwrap();
        assert!((d3.endpoint_derivs[3][0] - 840.0).abs() < 1e-9);
        assert!((d3.endpoint_derivs[3][1] + 840.0).abs() < 1e-9);
    }

    #[test]
    fn poly_lower_derivatives_vanish_exactly() {
        let g = Grid::new(20).unwrap();
        for k in 1..=5 {
            let m = JumpMeasure::build(&MeasurePreset::Poly { k }, &g).unwrap();
            let d = m.density.unwrap();
            for j in 0..k {
                assert_eq!(d.endpoint_derivs[j], [0.0, 0.0], "k={k}, j={j}");
            }
            assert!((d.mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn atom_and_mixture() {
        let g = Grid::new(20).unwrap();
        let a = JumpMeasure::build(&MeasurePreset::Atom { location: 0.5 }, &g).unwrap();
        assert_eq!(a.k_vanish, VanishingOrder::Infinite);
        assert!(a.density.is_none());
        for bad in [0.0, 1.0, 1.5, -0.1] {
            let e = JumpMeasure::build(&MeasurePreset::Atom { location: bad }, &g).unwrap_err();
            assert_eq!(e.to_string(), "invalid jump measure: atom location must lie in (0,1)");
        }
        let mix = MeasurePreset::Mixture {
            components: vec![
                MixtureComponent {
                    mass: 0.25,
                    measure: MeasurePreset::Uniform,
                },
                MixtureComponent {
                    mass: 0.5,
                    measure: MeasurePreset::Poly { k: 2 },
                },
                MixtureComponent {
                    mass: 0.25,
                    measure: MeasurePreset::Atom { location: 0.3 },
                },
            ],
        };
        let m = JumpMeasure::build(&mix, &g).unwrap();
        assert_eq!(m.k_vanish, VanishingOrder::Finite(0));
        assert!((m.density_mass() - 0.75).abs() < 1e-14);
        assert!((m.total_mass() - 1.0).abs() < 1e-14);

        let bad = MeasurePreset::Mixture {
            components: vec![MixtureComponent {
                mass: 0.6,
                measure: MeasurePreset::Uniform,
            }],
        };
        assert!(matches!(
            JumpMeasure::build(&bad, &g),
            Err(Error::InvalidMeasure(_))
        ));
    }

    #[test]
    fn tabulated_density_uses_fourth_order_differences() {
        let m = 200;
        // Trapezoid mass of 6x(1-x) sampled with m intervals is 1 - 1/m^2.
        let scale = 1.0 / (1.0 - 1.0 / (m * m) as f64);
        let values: Vec<f64> = (0..=m)
            .map(|i| {
                let x = i as f64 / m as f64;
                scale * 6.0 * x * (1.0 - x)
            })
            .collect();
        let g = Grid::new(30).unwrap();
        let jm = JumpMeasure::build(&MeasurePreset::Tabulated { values, k_vanish: 1 }, &g).unwrap();
        let d = jm.density.unwrap();
        assert_eq!(d.endpoint_derivs[0], [0.0, 0.0]);
        assert!((d.endpoint_derivs[1][0] - 6.0 * scale).abs() < 1e-9);
        assert!((d.endpoint_derivs[1][1] + 6.0 * scale).abs() < 1e-9);
        assert!((d.endpoint_derivs[2][0] + 12.0 * scale).abs() < 1e-6);
    }

    #[test]
    fn fornberg_matches_known_stencils() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let w = fornberg_weights(0.0, &xs, 1);
        let expect = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
        let w = fornberg_weights(1.0, &[0.0, 1.0, 2.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_presets_reflect_to_themselves() {
        let g = Grid::new(37).unwrap();
        for p in [RatePreset::Constant, RatePreset::Degenerate] {
            let v = RateField::build(&p, &g).unwrap();
            let r = v.reflected(&g).unwrap();
            for (a, b) in v.values.iter().zip(r.values.iter()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
        for p in [
            MeasurePreset::Uniform,
            MeasurePreset::Poly { k: 1 },
            MeasurePreset::Poly { k: 2 },
            MeasurePreset::Atom { location: 0.5 },
        ] {
            let m = JumpMeasure::build(&p, &g).unwrap();
            assert!(m.is_symmetric(), "{p:?}");
            if let Some(d) = &m.density {
                let rev: Vec<f64> = d.values.iter().rev().copied().collect();
                for (a, b) in d.values.iter().zip(rev) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let lin = RateField::build(&RatePreset::Linear { slope: 0.5 }, &g).unwrap();
        assert!(!lin.is_symmetric());
        let r = lin.reflected(&g).unwrap();
        assert_eq!(r.endpoint_values, [1.25, 0.75]);
    }
}
