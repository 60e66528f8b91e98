//! Monte Carlo simulation of Brownian motion on `(0,1)` killed at the
//! boundary, with an exponential clock of intensity `γV(X)` that
//! redistributes the particle according to `μ`.
//!
//! Every path owns its RNG stream: a ChaCha8 generator keyed by the run seed
//! with the path index as stream id. Estimates are reduced over fixed-size
//! chunks in index order, so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asym::linear_fit;
use crate::error::{Error, Result};
use crate::model::{JumpMeasure, RateField};

/// Paths per reduction chunk.
const CHUNK: usize = 4096;
/// Points of the tabulated density CDF used for inverse-CDF sampling.
const CDF_POINTS: usize = 4096;

pub const DEFAULT_DT: f64 = 1e-4;
pub const MIN_PATHS: usize = 1000;

pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Precomputed sampler for `μ`: atoms by mass, the density by inverse CDF of
/// its piecewise-linear interpolant.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    density_mass: f64,
    xs: Vec<f64>,
    fs: Vec<f64>,
    cdf: Vec<f64>,
    atom_locations: Vec<f64>,
    atom_cdf: Vec<f64>,
}

impl JumpSampler {
    pub fn new(mu: &JumpMeasure) -> Self {
        let (xs, fs, cdf) = match &mu.density {
            Some(d) => {
                let m = CDF_POINTS;
                let xs: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
                let fs: Vec<f64> = xs.iter().map(|&x| d.eval(x).max(0.0)).collect();
                let mut cdf = Vec::with_capacity(m + 1);
                cdf.push(0.0);
                for i in 0..m {
                    let prev = cdf[i];
                    cdf.push(prev + 0.5 * (fs[i] + fs[i + 1]) * (xs[i + 1] - xs[i]));
                }
                (xs, fs, cdf)
            }
            None => (vec![], vec![], vec![]),
        };
        let atom_mass: f64 = mu.atoms.iter().map(|a| a.mass).sum();
        let mut acc = 0.0;
        let atom_cdf = mu
            .atoms
            .iter()
            .map(|a| {
                acc += a.mass / atom_mass;
                acc
            })
            .collect();
        Self {
            density_mass: mu.density_mass() / (mu.density_mass() + atom_mass),
            xs,
            fs,
            cdf,
            atom_locations: mu.atoms.iter().map(|a| a.location).collect(),
            atom_cdf,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick: f64 = rng.gen();
        if pick < self.density_mass || self.atom_locations.is_empty() {
            self.sample_density(rng.gen())
        } else {
            let r = (pick - self.density_mass) / (1.0 - self.density_mass);
            let i = self.atom_cdf.partition_point(|&c| c < r);
            self.atom_locations[i.min(self.atom_locations.len() - 1)]
        }
    }

    fn sample_density(&self, uniform: f64) -> f64 {
        let total = *self.cdf.last().expect("density sampler without density");
        let target = uniform * total;
        let j = self
            .cdf
            .partition_point(|&c| c <= target)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        let (x0, x1) = (self.xs[j], self.xs[j + 1]);
        let (f0, f1) = (self.fs[j], self.fs[j + 1]);
        let w = x1 - x0;
        let r = target - self.cdf[j];
        // CDF inside the cell: f0 s + (f1 - f0) s² / (2w) = r.
        let slope = (f1 - f0) / w;
        let s = if slope.abs() < 1e-12 * f0.abs().max(1e-300) {
            if f0 > 0.0 {
                r / f0
            } else {
                0.5 * w
            }
        } else {
            let disc = (f0 * f0 + 2.0 * slope * r).max(0.0);
            2.0 * r / (f0 + disc.sqrt())
        };
        let x = x0 + s.clamp(0.0, w);
        x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }
}

/// `μ`-distributed jump target.
pub fn sample_jump<R: Rng + ?Sized>(mu: &JumpMeasure, rng: &mut R) -> f64 {
    JumpSampler::new(mu).sample(rng)
}

/// Candidate events of a homogeneous Poisson clock at the dominating rate;
/// the caller accepts each with probability `V(x)/max V`.
#[derive(Debug, Clone)]
pub struct ThinningClock {
    exp: Option<Exp<f64>>,
    /// Time from the start of the current step to the next candidate.
    next: f64,
}

impl ThinningClock {
    pub fn new<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Self {
        let exp = (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"));
        let next = exp.as_ref().map_or(f64::INFINITY, |e| e.sample(rng));
        Self { exp, next }
    }

    /// Offsets of the candidate events in `[0, step)`, advancing the clock by
    /// `step`.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        step: f64,
        rng: &mut R,
        mut on_event: impl FnMut(f64, &mut R),
    ) {
        if let Some(exp) = &self.exp {
            while self.next < step {
                on_event(self.next, rng);
                self.next += exp.sample(rng);
            }
        }
        self.next -= step;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gamma: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Redistribution clock on or off (off for Feynman–Kac functionals).
    pub jumps: bool,
    pub bridge: bool,
    /// Accumulate `exp(∫(λ - γV)ds)` with this `λ`.
    pub fk_lambda: Option<f64>,
}

impl PathParams {
    pub fn new(gamma: f64, horizon: f64, dt: f64) -> Self {
        Self {
            gamma,
            horizon,
            dt,
            jumps: true,
            bridge: true,
            fk_lambda: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-3) {
            return Err(Error::InvalidArgument(format!(
                "dt must lie in (0, 1e-3], got {}",
                self.dt
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be finite and nonnegative, got {}",
                self.horizon
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub exited: bool,
    pub exit_time: Option<f64>,
    pub n_jumps: u64,
    pub fk_weight: Option<f64>,
}

/// Probability that a Brownian bridge between `a` and `b` over time `dt`
/// touches the nearer boundary of `(0,1)`.
fn bridge_crossing_probability(a: f64, b: f64, dt: f64) -> f64 {
    let (d1, d2) = if a + b < 1.0 { (a, b) } else { (1.0 - a, 1.0 - b) };
    let arg = 2.0 * d1 * d2 / dt;
    if arg > 40.0 {
        0.0
    } else {
        (-arg).exp()
    }
}

/// One path from `x0`, Euler steps of Brownian motion with thinning for the
/// jump clock and a Brownian-bridge exit correction.
pub fn simulate_path<R: Rng + ?Sized>(
    x0: f64,
    v: &RateField,
    sampler: &JumpSampler,
    params: &PathParams,
    rng: &mut R,
) -> Result<PathOutcome> {
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "starting point must lie in (0,1), got {x0}"
        )));
    }
    params.validate()?;
    Ok(run_path(x0, v, sampler, params, rng))
}

fn run_path<R: Rng + ?Sized>(
    x0: f64,
    v: &RateField,
    sampler: &JumpSampler,
    params: &PathParams,
    rng: &mut R,
) -> PathOutcome {
    let gamma = params.gamma;
    let max_v = v.max_v;
    let dominating = if params.jumps { gamma * max_v } else { 0.0 };
    let mut clock = ThinningClock::new(dominating, rng);
    let mut x = x0;
    let mut t = 0.0;
    let mut n_jumps = 0u64;
    let mut log_weight = 0.0;
    let horizon = params.horizon;
    let sqrt_dt = params.dt.sqrt();

    while t < horizon {
        let step = params.dt.min(horizon - t);
        if step <= 0.0 {
            break;
        }
        clock.advance(step, rng, |_, rng| {
            let accept: f64 = rng.gen();
            if accept * max_v < v.eval(x) {
                x = sampler.sample(rng);
                n_jumps += 1;
            }
        });
        if let Some(lambda) = params.fk_lambda {
            log_weight += (lambda - gamma * v.eval(x)) * step;
        }
        let z: f64 = rng.sample(StandardNormal);
        let dw = if step == params.dt { sqrt_dt } else { step.sqrt() };
        let xn = x + dw * z;
        t += step;
        let exited = if xn <= 0.0 || xn >= 1.0 {
            true
        } else if params.bridge {
            let p = bridge_crossing_probability(x, xn, step);
            p > 0.0 && rng.gen::<f64>() < p
        } else {
            false
        };
        if exited {
            return PathOutcome {
                exited: true,
                exit_time: Some(t.min(horizon)),
                n_jumps,
                fk_weight: params.fk_lambda.map(|_| log_weight.exp()),
            };
        }
        x = xn;
    }
    PathOutcome {
        exited: false,
        exit_time: None,
        n_jumps,
        fk_weight: params.fk_lambda.map(|_| log_weight.exp()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Starting point of simulated paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Fixed(f64),
    FromMeasure,
}

/// Runs `n_paths` paths and folds each outcome into a per-chunk
/// accumulator; chunks are combined in index order.
fn run_paths<A, F, G>(n_paths: usize, seed: u64, init: A, path: F, combine: G) -> A
where
    A: Clone + Send + Sync,
    F: Fn(&mut ChaCha8Rng, &mut A) + Sync,
    G: Fn(A, A) -> A,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init.clone();
            let end = ((c + 1) * CHUNK).min(n_paths);
            for i in c * CHUNK..end {
                let mut rng = path_rng(seed, i as u64);
                path(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    partials.into_iter().fold(init, combine)
}

fn start_point(start: Start, sampler: &JumpSampler, rng: &mut ChaCha8Rng) -> f64 {
    match start {
        Start::Fixed(x) => x,
        Start::FromMeasure => sampler.sample(rng),
    }
}

fn check_start(start: Start) -> Result<()> {
    if let Start::Fixed(x) = start {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "starting point must lie in (0,1), got {x}"
            )));
        }
    }
    Ok(())
}

/// Survival counts at each time in `times` from paths run to the largest.
#[allow(clippy::too_many_arguments)]
fn survival_counts(
    start: Start,
    v: &RateField,
    mu: &JumpMeasure,
    gamma: f64,
    times: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<u64>> {
    check_start(start)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let params = PathParams::new(gamma, horizon, dt);
    params.validate()?;
    let sampler = JumpSampler::new(mu);
    Ok(run_paths(
        n_paths,
        seed,
        vec![0u64; times.len()],
        |rng, acc| {
            let x0 = start_point(start, &sampler, rng);
            let out = run_path(x0, v, &sampler, &params, rng);
            for (c, &t) in acc.iter_mut().zip(times) {
                if out.exit_time.is_none_or(|te| te > t) {
                    *c += 1;
                }
            }
        },
        |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
    ))
}

/// Fraction of paths alive at time `t`, with the binomial standard error.
#[allow(clippy::too_many_arguments)]
pub fn survival_probability(
    start: Start,
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    t: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PATHS} paths, got {n_paths}"
        )));
    }
    let counts = survival_counts(start, v, mu, gamma, &[t], n_paths, dt, seed)?;
    let p = counts[0] as f64 / n_paths as f64;
    Ok(McEstimate {
        value: p,
        std_error: (p * (1.0 - p) / n_paths as f64).sqrt(),
        n_paths,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub rate: f64,
    pub r_squared: f64,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    /// Times dropped because no path survived them.
    pub truncated: Vec<f64>,
}

/// `-slope` of `log S(t)` against `t`.
pub fn decay_rate_from_survival(times: &[f64], survival: &[f64]) -> Result<(f64, f64)> {
    if times.len() != survival.len() || times.len() < 2 {
        return Err(Error::InvalidArgument(
            "decay fit needs at least 2 paired points".into(),
        ));
    }
    if let Some(s) = survival.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("survival must be positive, got {s}")));
    }
    let y: Vec<f64> = survival.iter().map(|s| s.ln()).collect();
    let (_, slope, r2) = linear_fit(times, &y)?;
    Ok((-slope, r2))
}

/// Exponential decay rate of the survival probability, paths started from
/// `start` (by default drawn from `μ`).
#[allow(clippy::too_many_arguments)]
pub fn decay_rate_estimate(
    start: Start,
    gamma: f64,
    v: &RateField,
    mu: &JumpMeasure,
    t_list: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<DecayEstimate> {
    if t_list.len() < 3 || t_list.windows(2).any(|w| !(w[1] > w[0])) || t_list[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "t_list must hold at least 3 increasing nonnegative times".into(),
        ));
    }
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PATHS} paths, got {n_paths}"
        )));
    }
    let counts = survival_counts(start, v, mu, gamma, t_list, n_paths, dt, seed)?;
    let mut times = Vec::new();
    let mut survival = Vec::new();
    let mut truncated = Vec::new();
    for (&t, &c) in t_list.iter().zip(&counts) {
        if c == 0 {
            truncated.push(t);
        } else {
            times.push(t);
            survival.push(c as f64 / n_paths as f64);
        }
    }
    if times.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fewer than 2 times with survivors (truncated {truncated:?})"
        )));
    }
    let (rate, r_squared) = decay_rate_from_survival(&times, &survival)?;
    Ok(DecayEstimate {
        rate,
        r_squared,
        times,
        survival,
        truncated,
    })
}

/// Mean Feynman–Kac weight `exp(∫₀^τ (λ - γV(X))ds)` over killed Brownian
/// paths from `x0` (no jumps); estimates `u_{λ,γ}(x0)`.
#[allow(clippy::too_many_arguments)]
pub fn fk_estimate_u(
    x0: f64,
    lambda: f64,
    gamma: f64,
    v: &RateField,
    horizon: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<McEstimate> {
    check_start(Start::Fixed(x0))?;
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least 2 paths".into()));
    }
    let params = PathParams {
        gamma,
        horizon,
        dt,
        jumps: false,
        bridge: true,
        fk_lambda: Some(lambda),
    };
    params.validate()?;
    let sampler = JumpSampler {
        density_mass: 0.0,
        xs: vec![],
        fs: vec![],
        cdf: vec![],
        atom_locations: vec![0.5],
        atom_cdf: vec![1.0],
    };
    let (sum, sum_sq) = run_paths(
        n_paths,
        seed,
        (0.0f64, 0.0f64),
        |rng, acc| {
            let out = run_path(x0, v, &sampler, &params, rng);
            let w = out.fk_weight.unwrap_or(0.0);
            acc.0 += w;
            acc.1 += w * w;
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    );
    let n = n_paths as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_paths,
        seed,
    })
}

/// Sum of the eigenfunction series for the survival probability of
/// Brownian motion (generator `½Δ`) in `(0,1)` from `x0` at time `t`.
pub fn free_survival_series(x0: f64, t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (0..200)
        .map(|j| {
            let k = (2 * j + 1) as f64;
            4.0 / (k * pi) * (k * pi * x0).sin() * (-k * k * pi * pi * t / 2.0).exp()
        })
        .sum()
}
