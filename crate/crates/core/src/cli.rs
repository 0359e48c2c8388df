//! Experiment runner behind the `aoii` binary: flat `key=value` configs,
//! sweeps over one parameter, and CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::constrained::{solve_constrained, ConstrainedSolution};
use crate::error::{Error, Result};
use crate::mdp::{RateMode, SolverConfig};
use crate::simulator::{simulate, SimConfig, SimReport};
use crate::source::SystemParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_TRUNCATION: i32 = 4;

pub const THREADS_ENV: &str = "AOII_THREADS";
pub const DEFAULT_HORIZON: u64 = 10_000_000;
pub const DEFAULT_SEED: u64 = 1;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidParams(_) => EXIT_CONFIG,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        Error::Truncation { .. } => EXIT_TRUNCATION,
        _ => EXIT_OTHER,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    SweepP,
    SweepPs,
    SweepAlpha,
    Simulate,
    Validate,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Solve,
        Mode::SweepP,
        Mode::SweepPs,
        Mode::SweepAlpha,
        Mode::Simulate,
        Mode::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::SweepP => "sweep-p",
            Mode::SweepPs => "sweep-ps",
            Mode::SweepAlpha => "sweep-alpha",
            Mode::Simulate => "simulate",
            Mode::Validate => "validate",
        }
    }

    /// The grid key a sweep mode requires.
    fn sweep_key(self) -> Option<GridAxis> {
        match self {
            Mode::SweepP => Some(GridAxis::P),
            Mode::SweepPs => Some(GridAxis::Ps),
            Mode::SweepAlpha => Some(GridAxis::Alpha),
            _ => None,
        }
    }

    fn simulates(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Validate)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                format!("unknown mode '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAxis {
    P,
    Ps,
    Alpha,
}

impl GridAxis {
    fn key(self) -> &'static str {
        match self {
            GridAxis::P => "grid.p",
            GridAxis::Ps => "grid.ps",
            GridAxis::Alpha => "grid.alpha",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// One entry per grid point, in grid order.
    pub points: Vec<SystemParams>,
    pub grid: Option<(GridAxis, Vec<f64>)>,
    pub solver: SolverConfig,
    pub sim: Option<SimConfig>,
    pub output_path: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "N", "p", "p_s", "alpha", "m", "eps", "xi", "mode", "rate_mode", "grid.p", "grid.ps", "grid.alpha",
    "horizon", "seed", "warmup", "out",
];

/// Raw key/value pairs with the line each came from (0 for command-line
/// overrides).
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected key=value, got '{body}'"),
            })?;
            let key = canonical_key(k.trim()).ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("unknown key '{}'", k.trim()),
            })?;
            if let Some((prev, _)) = raw.values.get(key) {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("duplicate key '{key}' (first set on line {prev})"),
                });
            }
            raw.values.insert(key, (line_no, v.trim().to_string()));
        }
        Ok(raw)
    }

    /// Sets or replaces a value; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = canonical_key(key).ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("unknown key '{key}'"),
        })?;
        self.values.insert(key, (0, value.into()));
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line: *line,
                msg: format!("bad value '{v}' for {key}: {e}"),
            }),
        }
    }

    fn require<T: FromStr>(&self, key: &'static str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("missing required key '{key}'"),
        })
    }

    fn line(&self, key: &str) -> usize {
        self.values.get(key).map_or(0, |(l, _)| *l)
    }

    fn list(&self, key: &'static str) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.values.get(key) else {
            return Ok(None);
        };
        let items: std::result::Result<Vec<f64>, _> = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect();
        match items {
            Ok(xs) if !xs.is_empty() => Ok(Some(xs)),
            Ok(_) => Err(Error::Config { line: *line, msg: format!("{key} is empty") }),
            Err(e) => Err(Error::Config { line: *line, msg: format!("bad list for {key}: {e}") }),
        }
    }

    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let mode_line = self.line("mode");
        let mode_text: String = self.require("mode")?;
        if mode_text.is_empty() {
            return Err(Error::Config { line: mode_line, msg: "mode is empty".into() });
        }
        let mode: Mode = mode_text
            .parse()
            .map_err(|msg| Error::Config { line: mode_line, msg })?;

        let mut grid = None;
        for axis in [GridAxis::P, GridAxis::Ps, GridAxis::Alpha] {
            if let Some(xs) = self.list(axis.key())? {
                if grid.is_some() {
                    return Err(Error::Config {
                        line: self.line(axis.key()),
                        msg: "at most one grid may be given".into(),
                    });
                }
                grid = Some((axis, xs));
            }
        }
        if let Some(axis) = mode.sweep_key() {
            match &grid {
                Some((a, _)) if *a == axis => {}
                Some((a, _)) => {
                    return Err(Error::Config {
                        line: self.line(a.key()),
                        msg: format!("mode {mode} sweeps {}, not {}", axis.key(), a.key()),
                    })
                }
                None => {
                    return Err(Error::Config {
                        line: mode_line,
                        msg: format!("mode {mode} needs {}", axis.key()),
                    })
                }
            }
        }

        let on_grid = |axis| matches!(&grid, Some((a, _)) if *a == axis);
        let n: usize = self.require("N")?;
        let base = |key: &'static str, axis| -> Result<f64> {
            if on_grid(axis) {
                Ok(self.get(key)?.unwrap_or(f64::NAN))
            } else {
                self.require(key)
            }
        };
        let p = base("p", GridAxis::P)?;
        let p_s = base("p_s", GridAxis::Ps)?;
        let alpha = base("alpha", GridAxis::Alpha)?;

        let point = |p: f64, p_s: f64, alpha: f64, key: &str| {
            SystemParams::new(n, p, p_s, alpha).map_err(|e| Error::Config {
                line: self.line(key),
                msg: e.to_string(),
            })
        };
        let points = match &grid {
            None => vec![point(p, p_s, alpha, "p")?],
            Some((axis, xs)) => xs
                .iter()
                .map(|&x| match axis {
                    GridAxis::P => point(x, p_s, alpha, axis.key()),
                    GridAxis::Ps => point(p, x, alpha, axis.key()),
                    GridAxis::Alpha => point(p, p_s, x, axis.key()),
                })
                .collect::<Result<_>>()?,
        };

        let mut solver = SolverConfig::default();
        if let Some(m) = self.get("m")? {
            solver.m = m;
        }
        if let Some(eps) = self.get("eps")? {
            solver.eps = eps;
        }
        if let Some(xi) = self.get("xi")? {
            solver.xi = xi;
        }
        if let Some(mode) = self.get::<String>("rate_mode")? {
            solver.rate_mode = match mode.as_str() {
                "exact" => RateMode::Exact,
                "approx" => RateMode::Approx,
                other => {
                    return Err(Error::Config {
                        line: self.line("rate_mode"),
                        msg: format!("rate_mode must be exact or approx, got '{other}'"),
                    })
                }
            };
        }
        for pt in &points {
            solver.validate(pt).map_err(|e| Error::Config { line: 0, msg: e.to_string() })?;
        }

        let sim = if mode.simulates() {
            let mut cfg = SimConfig::new(
                self.get("horizon")?.unwrap_or(DEFAULT_HORIZON),
                self.get("seed")?.unwrap_or(DEFAULT_SEED),
            );
            if let Some(w) = self.get("warmup")? {
                cfg.warmup = w;
            }
            cfg.validate().map_err(|e| Error::Config {
                line: self.line("horizon"),
                msg: e.to_string(),
            })?;
            Some(cfg)
        } else {
            for key in ["horizon", "seed", "warmup"] {
                if self.values.contains_key(key) {
                    return Err(Error::Config {
                        line: self.line(key),
                        msg: format!("{key} is only used by simulate and validate"),
                    });
                }
            }
            None
        };

        Ok(ExperimentSpec {
            mode,
            points,
            grid,
            solver,
            sim,
            output_path: self.get::<String>("out")?.filter(|s| !s.is_empty()).map(PathBuf::from),
        })
    }
}

fn canonical_key(k: &str) -> Option<&'static str> {
    match k {
        "ps" => Some("p_s"),
        _ => KEYS.iter().copied().find(|&key| key == k),
    }
}

/// Parses a complete config; `mode` must be present.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    RawConfig::parse(text)?.into_spec()
}

/// One output line.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub params: SystemParams,
    pub solver: SolverConfig,
    pub solution: ConstrainedSolution,
    pub sim: Option<SimReport>,
    pub runtime_ms: Option<f64>,
}

pub const COLUMNS: &[&str] = &[
    "mode",
    "N",
    "p",
    "p_s",
    "alpha",
    "m",
    "eps",
    "xi",
    "lambda_minus",
    "lambda_plus",
    "mu",
    "thresholds_minus",
    "thresholds_plus",
    "rate",
    "aoii",
    "sim_rate",
    "sim_rate_se",
    "sim_aoii",
    "sim_aoii_se",
    "sim_seed",
    "rate_within_3se",
    "aoii_within_3se",
    "runtime_ms",
];

/// `x` with six significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{e}")
    }
}

impl ResultRow {
    fn record(&self, mode: Mode) -> Vec<String> {
        let s = &self.solution;
        let pol = &s.policy;
        let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
        let flag = |ok: Option<bool>| ok.map(|b| b.to_string()).unwrap_or_default();
        let sim = self.sim.as_ref();
        let checks = (mode == Mode::Validate).then_some(sim).flatten();
        vec![
            mode.name().to_string(),
            self.params.n().to_string(),
            fmt_sig(self.params.p()),
            fmt_sig(self.params.p_s()),
            fmt_sig(self.params.alpha()),
            self.solver.m.to_string(),
            fmt_sig(self.solver.eps),
            fmt_sig(self.solver.xi),
            fmt_sig(pol.lambda_minus),
            fmt_sig(pol.lambda_plus),
            fmt_sig(pol.mu),
            pol.n_minus.to_string(),
            pol.n_plus.to_string(),
            fmt_sig(s.rate),
            fmt_sig(s.aoii),
            opt(sim.map(|r| r.rate.mean)),
            opt(sim.map(|r| r.rate.se)),
            opt(sim.map(|r| r.aoii.mean)),
            opt(sim.map(|r| r.aoii.se)),
            sim.map(|r| r.seed.to_string()).unwrap_or_default(),
            flag(checks.map(|r| r.rate.within(s.rate, 3.0))),
            flag(checks.map(|r| r.aoii.within(s.aoii, 3.0))),
            opt(self.runtime_ms),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Fill the `runtime_ms` column (makes output non-reproducible).
    pub timing: bool,
    /// Worker cap; `None` reads `AOII_THREADS`, then falls back to rayon's
    /// default.
    pub threads: Option<usize>,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config {
                line: 0,
                msg: format!("{THREADS_ENV} must be a positive integer, got '{v}'"),
            }),
        },
    }
}

fn run_point(spec: &ExperimentSpec, idx: usize, params: &SystemParams, timing: bool) -> Result<ResultRow> {
    let start = Instant::now();
    let solution = solve_constrained(params, &spec.solver)?;
    let sim = match &spec.sim {
        Some(cfg) => {
            // Each grid point gets its own stream.
            let cfg = SimConfig { seed: cfg.seed.wrapping_add(idx as u64), ..cfg.clone() };
            Some(simulate(&solution.policy, params, &cfg)?)
        }
        None => None,
    };
    Ok(ResultRow {
        params: *params,
        solver: spec.solver.clone(),
        solution,
        sim,
        runtime_ms: timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    })
}

/// Solves every grid point (in parallel) and returns rows in grid order.
pub fn run(spec: &ExperimentSpec, opts: RunOptions) -> Result<Vec<ResultRow>> {
    let threads = match opts.threads {
        Some(n) => Some(n),
        None => threads_from_env()?,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config { line: 0, msg: format!("thread pool: {e}") })?;
    pool.install(|| {
        spec.points
            .par_iter()
            .enumerate()
            .map(|(i, p)| run_point(spec, i, p, opts.timing))
            .collect()
    })
}

pub fn write_csv<W: Write>(out: W, mode: Mode, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        w.write_record(row.record(mode))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a spec and writes the CSV to its output path, or to `stdout` when
/// none is set.
pub fn execute(spec: &ExperimentSpec, opts: RunOptions) -> Result<Vec<ResultRow>> {
    let rows = run(spec, opts)?;
    match &spec.output_path {
        Some(path) => write_csv(std::fs::File::create(path)?, spec.mode, &rows)?,
        None => write_csv(std::io::stdout().lock(), spec.mode, &rows)?,
    }
    Ok(rows)
}
