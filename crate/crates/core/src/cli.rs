//! Command-line front end: JSON run configs, command dispatch, and CSV/JSON
//! reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asym::{self, SweepOptions, SweepRow};
use crate::bvp;
use crate::degenerate::{self, Sign};
use crate::eigen::{self, Method};
use crate::error::{Error, Result};
use crate::mc::{self, Start};
use crate::model::{Grid, JumpMeasure, MeasurePreset, RateField, RatePreset};

/// Header of the sweep table.
pub const SWEEP_COLUMNS: [&str; 9] = [
    "gamma",
    "h",
    "lambda0",
    "lambda0_richardson",
    "scaled",
    "k",
    "method",
    "iterations",
    "residual",
];

/// Largest relative route disagreement accepted by `solve --assert`.
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    FixedPoint,
    Matrix,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::FixedPoint => vec![Method::FixedPoint],
            MethodChoice::Matrix => vec![Method::Matrix],
            MethodChoice::Both => vec![Method::FixedPoint, Method::Matrix],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

fn default_dt() -> f64 {
    mc::DEFAULT_DT
}

fn default_fk_points() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_horizon() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub t_list: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Fixed starting point; paths start from `μ` when absent.
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default)]
    pub fk_lambda: f64,
    #[serde(default = "default_fk_points")]
    pub fk_points: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn default_epsilon() -> f64 {
    degenerate::DEFAULT_EPSILON
}

fn default_check_gamma() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_check_gamma")]
    pub check_gamma: f64,
}

impl Default for DegenerateConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            check_gamma: default_check_gamma(),
        }
    }
}

fn default_method() -> MethodChoice {
    MethodChoice::FixedPoint
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub rate: RatePreset,
    pub jump: MeasurePreset,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    #[serde(default = "yes")]
    pub richardson: bool,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub degenerate: DegenerateConfig,
}

const TOP_KEYS: &[&str] = &[
    "grid",
    "rate",
    "jump",
    "gammas",
    "k",
    "method",
    "richardson",
    "mc",
    "output",
    "degenerate",
];
const NESTED_KEYS: &[(&str, &[&str])] = &[
    ("grid", &["n"]),
    (
        "mc",
        &["n_paths", "dt", "t_list", "seed", "x0", "fk_lambda", "fk_points", "horizon"],
    ),
    ("output", &["path", "format"]),
    ("degenerate", &["epsilon", "check_gamma"]),
];

/// Unknown keys at the top level and in the fixed-shape sections.
fn unknown_keys(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(obj) = v.as_object() else {
        return out;
    };
    for key in obj.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            out.push(key.clone());
        }
    }
    for (section, keys) in NESTED_KEYS {
        if let Some(inner) = obj.get(*section).and_then(Value::as_object) {
            for key in inner.keys() {
                if !keys.contains(&key.as_str()) {
                    out.push(format!("{section}.{key}"));
                }
            }
        }
    }
    out
}

/// `"constant"` is shorthand for `{"preset": "constant"}`.
fn expand_preset_shorthand(v: &mut Value) {
    if let Some(obj) = v.as_object_mut() {
        for key in ["rate", "jump"] {
            if let Some(Value::String(s)) = obj.get(key) {
                let s = s.clone();
                obj.insert(key.into(), json!({ "preset": s }));
            }
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        expand_preset_shorthand(&mut value);
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that the fields build on the configured grid.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.fields(&grid)?;
        if let Some(g) = self
            .gammas
            .iter()
            .find(|g| !(**g >= 0.0 && **g <= bvp::GAMMA_MAX))
        {
            return Err(Error::InvalidArgument(format!(
                "gamma = {g} outside [0, {}]",
                bvp::GAMMA_MAX
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n)
    }

    pub fn fields(&self, grid: &Grid) -> Result<(RateField, JumpMeasure)> {
        Ok((
            RateField::build(&self.rate, grid)?,
            JumpMeasure::build(&self.jump, grid)?,
        ))
    }

    fn nonempty_gammas(&self) -> Result<&[f64]> {
        if self.gammas.is_empty() {
            return Err(Error::InvalidArgument("gammas must be nonempty".into()));
        }
        Ok(&self.gammas)
    }

    /// Vanishing order, checked against the override.
    fn k(&self, mu: &JumpMeasure) -> Result<Option<usize>> {
        let declared = mu.k_vanish.finite();
        match self.k {
            Some(k) if declared != Some(k) => Err(Error::InvalidArgument(format!(
                "k = {k} is inconsistent with the measure's vanishing order {:?}",
                mu.k_vanish
            ))),
            _ => Ok(declared),
        }
    }

    fn mc(&self) -> Result<&McConfig> {
        self.mc
            .as_ref()
            .ok_or_else(|| Error::Config("missing field `mc`".into()))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    RunConfig::from_json_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Sweep,
    Constant,
    Diagnose,
    Simulate,
    FkCheck,
    Degenerate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Constant => "constant",
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
            Command::FkCheck => "fk-check",
            Command::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jumpeig", version, about = "Principal eigenvalue lab for Brownian motion with random jumps on (0,1)")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Output path (overrides output.path; stdout when neither is given).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Seed for Monte Carlo commands (overrides mc.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail with a nonzero status when a command's checks do not hold.
    #[arg(long)]
    pub assert: bool,
}

/// A table cell; integers and text are kept apart from reals so the CSV
/// regenerated from JSON is identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Null,
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Int(i) => write!(out, "{i}").unwrap(),
            Cell::Num(x) if x.is_finite() => write!(out, "{x:.16e}").unwrap(),
            Cell::Num(_) | Cell::Null => {}
            Cell::Text(s) => out.push_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        if x.is_finite() {
            Cell::Num(x)
        } else {
            Cell::Null
        }
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<Option<usize>> for Cell {
    fn from(x: Option<usize>) -> Self {
        x.map_or(Cell::Null, Cell::from)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                cell.render(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub table: Table,
    pub details: Value,
    pub assertions: Vec<Assertion>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        self.table.to_csv()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    fn check(&mut self, name: impl Into<String>, passed: bool) {
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
        });
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn sweep_row_cells(r: &SweepRow) -> Vec<Cell> {
    vec![
        r.gamma.into(),
        r.h.into(),
        r.lambda0.into(),
        r.lambda0_richardson.into(),
        r.scaled.into(),
        r.k.into(),
        r.method.as_str().into(),
        r.iterations.into(),
        r.residual.into(),
    ]
}

/// Sweep-schema table; with two routes an `agreement` column holds
/// `|λ_fp - λ_m| / λ_m` for each `γ`.
fn sweep_table(by_method: &[Vec<SweepRow>]) -> (Table, Vec<f64>) {
    let both = by_method.len() == 2;
    let mut columns = SWEEP_COLUMNS.to_vec();
    if both {
        columns.push("agreement");
    }
    let mut table = Table::new(&columns);
    let agreement: Vec<f64> = if both {
        by_method[0]
            .iter()
            .zip(&by_method[1])
            .map(|(a, b)| (a.lambda0 - b.lambda0).abs() / b.lambda0.abs())
            .collect()
    } else {
        vec![]
    };
    for rows in by_method {
        for (i, r) in rows.iter().enumerate() {
            let mut cells = sweep_row_cells(r);
            if both {
                cells.push(agreement[i].into());
            }
            table.rows.push(cells);
        }
    }
    (table, agreement)
}

fn solve(cfg: &RunConfig) -> Result<Report> {
    let gammas = cfg.nonempty_gammas()?;
    let grid = cfg.grid()?;
    let (v, mu) = cfg.fields(&grid)?;
    let k = cfg.k(&mu)?;
    let mut by_method = Vec::new();
    let mut results = Vec::new();
    for method in cfg.method.methods() {
        let mut rows = Vec::new();
        for &gamma in gammas {
            let mut run = || -> Result<SweepRow> {
                let (res, extrapolated) = if cfg.richardson {
                    let r = eigen::principal_eigenvalue_richardson(
                        method,
                        gamma,
                        &v,
                        &mu,
                        &grid,
                        eigen::DEFAULT_REL_TOL,
                    )?;
                    let e = r.extrapolated;
                    (r.coarse, e)
                } else {
                    let r = eigen::principal_eigenvalue(
                        method,
                        gamma,
                        &v,
                        &mu,
                        &grid,
                        eigen::DEFAULT_REL_TOL,
                    )?;
                    let e = r.lambda0;
                    (r, e)
                };
                results.push(json!({
                    "gamma": gamma,
                    "lambda0": res.lambda0,
                    "lambda_star": res.lambda_star,
                    "method": res.method,
                    "iterations": res.iterations,
                    "residual": res.residual,
                }));
                Ok(SweepRow {
                    gamma,
                    h: grid.h(),
                    lambda0: res.lambda0,
                    lambda0_richardson: extrapolated,
                    scaled: asym::scaling(gamma, k) * extrapolated,
                    k,
                    method: res.method,
                    iterations: res.iterations,
                    residual: res.residual,
                })
            };
            rows.push(run().map_err(|e| e.at_gamma(gamma))?);
        }
        by_method.push(rows);
    }
    let (table, agreement) = sweep_table(&by_method);
    let mut report = Report {
        command: "solve".into(),
        table,
        details: json!({ "results": results, "agreement": agreement }),
        assertions: vec![],
    };
    let finite = by_method
        .iter()
        .flatten()
        .all(|r| r.lambda0.is_finite() && r.lambda0 > 0.0);
    report.check("lambda0 finite and positive", finite);
    if !agreement.is_empty() {
        report.check(
            format!("route agreement <= {AGREEMENT_TOL:e}"),
            agreement.iter().all(|a| *a <= AGREEMENT_TOL),
        );
    }
    Ok(report)
}

/// Tolerance on the extrapolated limit constant for vanishing order `k`.
fn limit_tolerance(k: usize) -> f64 {
    match k {
        0 | 1 => 0.03,
        2 => 0.04,
        _ => 0.06,
    }
}

fn sweep(cfg: &RunConfig) -> Result<Report> {
    let gammas = cfg.nonempty_gammas()?;
    let grid = cfg.grid()?;
    let (v, mu) = cfg.fields(&grid)?;
    let k = cfg.k(&mu)?;
    let mut by_method = Vec::new();
    let mut results = Vec::new();
    for method in cfg.method.methods() {
        let opts = SweepOptions {
            method,
            rel_tol: eigen::DEFAULT_REL_TOL,
            richardson: cfg.richardson,
        };
        let res = asym::sweep_gamma(gammas, &v, &mu, &grid, opts)?;
        by_method.push(res.rows.clone());
        results.push(res);
    }
    let (table, agreement) = sweep_table(&by_method);
    let primary = &results[0];
    let decay = if k.is_none() && gammas.len() >= 4 {
        asym::exponential_decay_fit(&primary.gammas(), &primary.lambda0s()).ok()
    } else {
        None
    };
    let details = json!({
        "fit_exponent": primary.fit_exponent,
        "fit_constant": primary.fit_constant,
        "local_slopes": primary.local_slopes,
        "limit_constant": primary.limit_constant,
        "extrapolated_intercept": primary.extrapolated_intercept,
        "exponential_decay": decay.map(|(c, r2)| json!({ "c_hat": c, "r_squared": r2 })),
        "agreement": agreement,
    });
    let mut report = Report {
        command: "sweep".into(),
        table,
        details,
        assertions: vec![],
    };
    if let (Some(k), Some(limit), Some(icpt)) =
        (k, primary.limit_constant, primary.extrapolated_intercept)
    {
        let tol = limit_tolerance(k);
        report.check(
            format!("extrapolated intercept within {}% of the limit constant", tol * 100.0),
            ((icpt - limit) / limit).abs() <= tol,
        );
    }
    if !agreement.is_empty() {
        report.check(
            format!("route agreement <= {AGREEMENT_TOL:e}"),
            agreement.iter().all(|a| *a <= AGREEMENT_TOL),
        );
    }
    Ok(report)
}

fn constant(cfg: &RunConfig) -> Result<Report> {
    let grid = cfg.grid()?;
    let (v, mu) = cfg.fields(&grid)?;
    let k = match cfg.k {
        Some(k) => k,
        None => mu.k_vanish.finite().ok_or_else(|| {
            Error::InvalidArgument("measure has no finite vanishing order; set k".into())
        })?,
    };
    let c = asym::theoretical_limit_constant(k, &v, &mu)?;
    let mut table = Table::new(&["k", "limit_constant"]);
    table.rows.push(vec![k.into(), c.into()]);
    let mut report = Report {
        command: "constant".into(),
        table,
        details: json!({ "k": k, "limit_constant": c }),
        assertions: vec![],
    };
    report.check("limit constant finite", c.is_finite());
    Ok(report)
}

fn diagnose(cfg: &RunConfig) -> Result<Report> {
    let gammas = cfg.nonempty_gammas()?;
    let grid = cfg.grid()?;
    let (v, mu) = cfg.fields(&grid)?;
    let mut table = Table::new(&[
        "gamma",
        "lambda0",
        "v_limit_sup",
        "normal_deriv_err_left",
        "normal_deriv_err_right",
        "sublinearity_ratio",
    ]);
    let mut diags = Vec::new();
    for &gamma in gammas {
        let d = asym::boundary_layer_diagnostics(gamma, &v, &mu, &grid, asym::DEFAULT_MARGIN)
            .map_err(|e| e.at_gamma(gamma))?;
        table.rows.push(vec![
            d.gamma.into(),
            d.lambda0.into(),
            d.v_limit_sup.into(),
            d.normal_deriv_errs[0].into(),
            d.normal_deriv_errs[1].into(),
            d.sublinearity_ratio.into(),
        ]);
        diags.push(d);
    }
    let mut report = Report {
        command: "diagnose".into(),
        table,
        details: to_value(&diags),
        assertions: vec![],
    };
    report.check(
        "lambda0/gamma strictly decreasing",
        diags
            .windows(2)
            .all(|w| w[1].sublinearity_ratio < w[0].sublinearity_ratio),
    );
    Ok(report)
}

fn mc_seed(cfg: &RunConfig, seed: Option<u64>) -> Result<u64> {
    seed.or(cfg.mc.as_ref().and_then(|m| m.seed)).ok_or_else(|| {
        Error::Config("Monte Carlo commands need a seed (--seed or mc.seed)".into())
    })
}

/// Relative tolerance between the MC decay rate and the PDE eigenvalue.
const DECAY_TOL: f64 = 0.15;

fn simulate(cfg: &RunConfig, seed: Option<u64>) -> Result<Report> {
    let seed = mc_seed(cfg, seed)?;
    let m = cfg.mc()?;
    let gammas = cfg.nonempty_gammas()?;
    if m.t_list.is_empty() {
        return Err(Error::InvalidArgument("mc.t_list must be nonempty".into()));
    }
    let grid = cfg.grid()?;
    let (v, mu) = cfg.fields(&grid)?;
    let start = m.x0.map_or(Start::FromMeasure, Start::Fixed);
    let mut table = Table::new(&["gamma", "t", "survival", "std_error", "n_paths", "seed"]);
    let mut per_gamma = Vec::new();
    let mut checks = Vec::new();
    for &gamma in gammas {
        let mut surv = Vec::new();
        for &t in &m.t_list {
            let e = mc::survival_probability(start, gamma, &v, &mu, t, m.n_paths, m.dt, seed)
                .map_err(|e| e.at_gamma(gamma))?;
            table.rows.push(vec![
                gamma.into(),
                t.into(),
                e.value.into(),
                e.std_error.into(),
                e.n_paths.into(),
                Cell::Int(seed as i64),
            ]);
            surv.push(e);
        }
        let decay = if m.t_list.len() >= 3 {
            Some(
                mc::decay_rate_estimate(start, gamma, &v, &mu, &m.t_list, m.n_paths, m.dt, seed)
                    .map_err(|e| e.at_gamma(gamma))?,
            )
        } else {
            None
        };
        let pde = eigen::principal_eigenvalue(
            Method::FixedPoint,
            gamma,
            &v,
            &mu,
            &grid,
            eigen::DEFAULT_REL_TOL,
        )
        .map_err(|e| e.at_gamma(gamma))?
        .lambda0;
        if let Some(d) = &decay {
            checks.push((gamma, ((d.rate - pde) / pde).abs() <= DECAY_TOL));
        }
        per_gamma.push(json!({
            "gamma": gamma,
            "survival": surv,
            "decay": decay,
            "pde_lambda0": pde,
        }));
    }
    let mut report = Report {
        command: "simulate".into(),
        table,
        details: json!({ "seed": seed, "results": per_gamma }),
        assertions: vec![],
    };
    for (gamma, ok) in checks {
        report.check(
            format!("decay rate within {}% of PDE lambda0 at gamma = {gamma}", DECAY_TOL * 100.0),
            ok,
        );
    }
    Ok(report)
}

/// Linear interpolation of a grid field including boundary values.
fn interpolate(f: &crate::model::ScalarField, grid: &Grid, x: f64) -> f64 {
    let s = x / grid.h();
    let j = (s.floor() as usize).min(grid.n_interior());
    let t = s - j as f64;
    (1.0 - t) * f.at(j) + t * f.at(j + 1)
}

/// Standard errors allowed between the FK estimate and the BVP solution.
const FK_Z_MAX: f64 = 3.0;

fn fk_check(cfg: &RunConfig, seed: Option<u64>) -> Result<Report> {
    let seed = mc_seed(cfg, seed)?;
    let m = cfg.mc()?;
    let gammas = cfg.nonempty_gammas()?;
    let grid = cfg.grid()?;
    let (v, _) = cfg.fields(&grid)?;
    let lambda = m.fk_lambda;
    let mut table = Table::new(&["gamma", "lambda", "x0", "fk", "std_error", "bvp", "z"]);
    let mut zs = Vec::new();
    for &gamma in gammas {
        if !(lambda < gamma * v.min_v) {
            return Err(Error::InvalidArgument(format!(
                "fk_lambda = {lambda} must be below gamma * min V = {}",
                gamma * v.min_v
            ))
            .at_gamma(gamma));
        }
        let u = bvp::solve_u(lambda, gamma, &v, &grid).map_err(|e| e.at_gamma(gamma))?;
        for &x in &m.fk_points {
            let e = mc::fk_estimate_u(x, lambda, gamma, &v, m.horizon, m.n_paths, m.dt, seed)
                .map_err(|e| e.at_gamma(gamma))?;
            let reference = interpolate(&u, &grid, x);
            let z = (e.value - reference) / e.std_error.max(f64::MIN_POSITIVE);
            table.rows.push(vec![
                gamma.into(),
                lambda.into(),
                x.into(),
                e.value.into(),
                e.std_error.into(),
                reference.into(),
                z.into(),
            ]);
            zs.push(z);
        }
    }
    let mut report = Report {
        command: "fk-check".into(),
        table,
        details: json!({ "seed": seed, "n_paths": m.n_paths, "dt": m.dt }),
        assertions: vec![],
    };
    report.check(
        format!("every |z| <= {FK_Z_MAX}"),
        zs.iter().all(|z| z.abs() <= FK_Z_MAX),
    );
    Ok(report)
}

fn degenerate_cmd(cfg: &RunConfig) -> Result<Report> {
    let gammas = cfg.nonempty_gammas()?;
    let s = degenerate::degenerate_sweep(gammas, cfg.grid.n)?;
    let (table, _) = sweep_table(std::slice::from_ref(&s.sweep.rows));
    let g = cfg.degenerate.check_gamma;
    let eps = cfg.degenerate.epsilon;
    let lower = degenerate::supersolution_check(g, eps * g.cbrt(), Sign::Nonnegative)?;
    let upper = degenerate::supersolution_check(g, eps * g.powf(2.0 / 3.0), Sign::Nonpositive)?;
    let details = json!({
        "exploratory_fit_exponent": s.sweep.fit_exponent,
        "local_slopes": s.local_slopes,
        "slopes_in_window": s.slopes_in_window,
        "strictly_increasing": s.strictly_increasing,
        "c1_hat": s.c1_hat,
        "c2_hat": s.c2_hat,
        "supersolution": [lower, upper],
    });
    let mut report = Report {
        command: "degenerate".into(),
        table,
        details,
        assertions: vec![],
    };
    report.check("local slopes within [1/3 - 0.05, 2/3 + 0.05]", s.slopes_in_window);
    report.check("lambda0 strictly increasing", s.strictly_increasing);
    report.check("lower-bound construction: L u - c u >= 0", lower.holds);
    report.check("upper-bound construction: L u - c u <= 0", upper.holds);
    Ok(report)
}

pub fn run_command(cmd: Command, cfg: &RunConfig, seed: Option<u64>) -> Result<Report> {
    match cmd {
        Command::Solve => solve(cfg),
        Command::Sweep => sweep(cfg),
        Command::Constant => constant(cfg),
        Command::Diagnose => diagnose(cfg),
        Command::Simulate => simulate(cfg, seed),
        Command::FkCheck => fk_check(cfg, seed),
        Command::Degenerate => degenerate_cmd(cfg),
    }
}

/// Machine-readable error object.
pub fn error_json(e: &Error) -> Value {
    let gamma = match e {
        Error::AtGamma { gamma, .. } => Some(*gamma),
        _ => None,
    };
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "gamma": gamma } })
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = parse_config(&cli.config)?;
    let report = run_command(cli.command, &cfg, cli.seed)?;
    let format = cli.format.unwrap_or(cfg.output.format);
    let text = report.render(format);
    match cli.out.as_ref().or(cfg.output.path.as_ref()) {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if cli.assert {
        for a in report.assertions.iter().filter(|a| !a.passed) {
            eprintln!("assertion failed: {}", a.name);
        }
        return Ok(report.all_passed());
    }
    Ok(true)
}

/// Exit codes: 0 success, 1 failed `--assert`, 2 error.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = Error::InvalidArgument(e.render().to_string().trim().to_string());
            eprintln!("{}", error_json(&err));
            return 2;
        }
    };
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"grid":{"n":2000},"rate":"constant","jump":"uniform","gammas":[100]}"#;

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.grid.n, 2000);
        assert_eq!(c.rate, RatePreset::Constant);
        assert_eq!(c.jump, MeasurePreset::Uniform);
        assert_eq!(c.method, MethodChoice::FixedPoint);
        assert!(c.richardson);
    }

    #[test]
    fn config_errors() {
        let e = RunConfig::from_json_str(
            r#"{"grid":{"n":2000},"rate":"constant","jump":{"preset":"atom","location":1.5}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("atom location must lie in (0,1)"), "{e}");

        let e = RunConfig::from_json_str(
            r#"{"grid":{"n":2000,"m":1},"rate":"constant","jump":"uniform","foo":1,"bar":2}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("foo") && e.contains("bar") && e.contains("grid.m"), "{e}");

        let e = RunConfig::from_json_str(r#"{"grid":{"n":2000},"rate":"wiggly","jump":"uniform"}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("wiggly") && e.contains("constant") && e.contains("degenerate"), "{e}");

        let e = RunConfig::from_json_str(r#"{"rate":"constant","jump":"uniform"}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("missing field `grid`"), "{e}");

        let e = RunConfig::from_json_str(
            r#"{"grid":{"n":2000},"rate":{"preset":"linear","slope":0.5,"x":1},"jump":"uniform"}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("unknown field"), "{e}");
    }

    #[test]
    fn solve_reference_row() {
        let c = RunConfig::from_json_str(MINIMAL).unwrap();
        let r = run_command(Command::Solve, &c, None).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_COLUMNS.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let lambda: f64 = row[2].parse().unwrap();
        assert!((lambda - 15.373).abs() < 0.03);
        assert_eq!(row[6], "fixed_point");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn method_both_emits_agreement() {
        let mut c = RunConfig::from_json_str(MINIMAL).unwrap();
        c.method = MethodChoice::Both;
        let r = run_command(Command::Solve, &c, None).unwrap();
        assert_eq!(r.table.columns.last().unwrap(), "agreement");
        assert_eq!(r.table.rows.len(), 2);
        assert!(r.all_passed(), "{:?}", r.assertions);
    }

    #[test]
    fn constant_command() {
        let c = RunConfig::from_json_str(
            r#"{"grid":{"n":2000},"rate":"constant","jump":{"preset":"poly","k":2},"k":2}"#,
        )
        .unwrap();
        let r = run_command(Command::Constant, &c, None).unwrap();
        let v = r.details["limit_constant"].as_f64().unwrap();
        assert!((v - 42.4264).abs() < 1e-3);
        let bad = RunConfig { k: Some(1), ..c };
        assert!(run_command(Command::Constant, &bad, None).is_err());
    }

    #[test]
    fn empty_gammas_and_missing_seed() {
        let c = RunConfig::from_json_str(
            r#"{"grid":{"n":2000},"rate":"constant","jump":"uniform","gammas":[],
                "mc":{"n_paths":1000,"t_list":[0.1]}}"#,
        )
        .unwrap();
        let e = run_command(Command::Sweep, &c, None).unwrap_err();
        assert!(e.to_string().contains("gammas must be nonempty"));
        let c = RunConfig {
            gammas: vec![1.0],
            ..c
        };
        let e = run_command(Command::Simulate, &c, None).unwrap_err();
        assert_eq!(e.kind(), "config");
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn json_round_trip_regenerates_csv() {
        let mut c = RunConfig::from_json_str(MINIMAL).unwrap();
        c.gammas = vec![10.0, 100.0];
        c.method = MethodChoice::Both;
        let r = run_command(Command::Solve, &c, None).unwrap();
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.to_csv(), r.to_csv());
    }

    #[test]
    fn numbers_carry_17_significant_digits() {
        let mut s = String::new();
        Cell::Num(0.1).render(&mut s);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn error_object_is_machine_readable() {
        let e = Error::NoRoot { upper: 3.0 }.at_gamma(100.0);
        let v = error_json(&e);
        assert_eq!(v["error"]["kind"], "no-root");
        assert_eq!(v["error"]["gamma"], 100.0);
    }
}
