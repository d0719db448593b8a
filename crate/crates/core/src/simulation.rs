//! Closed-loop hemisphere simulation: controller, plant, telemetry and CSV output.

use crate::error::{Error, Result};
use crate::hemisphere::{lift, HemisphereParams, HemisphereProblem};
use crate::horizon::HorizonGrid;
use crate::integrators::{local_coordinates_step, ManifoldChart, OneStepMethod};
use crate::solver::{initialize, InitReport, NmpcController, SampleTelemetry, SolverConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Horizon steps.
    pub horizon: usize,
    /// Plant sampling step in seconds.
    pub dt: f64,
    pub max_samples: usize,
    /// Stop once the predicted travel time falls to this value.
    pub p_stop: f64,
    pub params: HemisphereParams,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    /// Reserved; the simulation is deterministic.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 20,
            dt: 0.00625,
            max_samples: 400,
            p_stop: 0.02,
            params: HemisphereParams::default(),
            solver: SolverConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{value}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("expected a boolean for `{key}`, got `{value}`"),
        }),
    }
}

impl SimConfig {
    pub fn precond_enabled(&self) -> bool {
        self.solver.precondition
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0) || !(self.p_stop > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt and p_stop must be positive, got dt = {}, p_stop = {}",
                self.dt, self.p_stop
            )));
        }
        self.params.validate()?;
        self.solver.validate()
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and text
    /// after `#` are ignored; a `[section]` header is accepted and ignored.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() || (content.starts_with('[') && content.ends_with(']')) {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            self.set(line, key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_str_config(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str_config(&text)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let prm = &mut self.params;
        let sol = &mut self.solver;
        match key {
            "horizon" | "N" => self.horizon = parse_value(line, key, value)?,
            "dt" => self.dt = parse_value(line, key, value)?,
            "max_samples" => self.max_samples = parse_value(line, key, value)?,
            "t_max" => {
                let t_max: f64 = parse_value(line, key, value)?;
                if !(t_max > 0.0) {
                    return Err(Error::Config {
                        line,
                        message: "t_max must be positive".into(),
                    });
                }
                self.max_samples = (t_max / self.dt).round() as usize;
            }
            "p_stop" => self.p_stop = parse_value(line, key, value)?,
            "c_u" => prm.c_u = parse_value(line, key, value)?,
            "r_u" => prm.r_u = parse_value(line, key, value)?,
            "w_s" => prm.w_s = parse_value(line, key, value)?,
            "x0" => prm.x0 = parse_value(line, key, value)?,
            "y0" => prm.y0 = parse_value(line, key, value)?,
            "x_f" => prm.x_f = parse_value(line, key, value)?,
            "y_f" => prm.y_f = parse_value(line, key, value)?,
            "fd_step" => sol.fd_step = parse_value(line, key, value)?,
            "k_max" => sol.gmres.max_iters = parse_value(line, key, value)?,
            "gmres_tol" => sol.gmres.abs_tol = parse_value(line, key, value)?,
            "precond_period" => sol.precond_period = parse_value(line, key, value)?,
            "precond_enabled" => sol.precondition = parse_bool(line, key, value)?,
            "newton_iters_per_sample" => {
                sol.newton_iters_per_sample = parse_value(line, key, value)?
            }
            "init_tol" => sol.init_tol = parse_value(line, key, value)?,
            "init_max_iters" => sol.init_max_iters = parse_value(line, key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = parse_value(line, key, value)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }
}

/// One row of closed-loop output, taken at the sampling instant `t` before
/// the plant advances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
    pub u_s0: f64,
    pub p: f64,
    pub norm_f: f64,
    pub gmres_iters: usize,
    /// `NaN` when no preconditioner was used.
    pub precond_age: f64,
    pub precond_refreshed: bool,
    pub sphere_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TravelTimeReached,
    SampleLimit,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub init: InitReport,
    pub records: Vec<TrajectoryRecord>,
    pub telemetry: Vec<SampleTelemetry>,
    pub stop: StopReason,
    /// Plant chart state after the last applied control.
    pub final_state: [f64; 2],
    /// Decision vector after each sample update, if requested.
    pub decisions: Vec<Vec<f64>>,
}

/// A failed run: the cause and everything recorded up to it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("simulation aborted at sample {sample}: {source}")]
pub struct SimFailure {
    pub sample: usize,
    pub source: Error,
    pub records: Vec<TrajectoryRecord>,
}

impl SimFailure {
    pub fn last_good(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn is_config_error(&self) -> bool {
        matches!(
            self.source,
            Error::InvalidArgument(_) | Error::Config { .. }
        )
    }
}

/// Runs [`initialize`] at the configured start.
pub fn initialize_for(cfg: &SimConfig) -> Result<(HemisphereProblem, HorizonGrid, InitReport)> {
    cfg.validate()?;
    let problem = HemisphereProblem::new(cfg.params);
    let grid = HorizonGrid::uniform(cfg.horizon, 1.0)?;
    let start = cfg.params.start();
    let guess = problem.initial_guess(cfg.horizon, &start)?;
    let report = initialize(&problem, &grid, &start, &guess, &cfg.solver)?;
    Ok((problem, grid, report))
}

/// Physical plant step: chart explicit Euler of the unscaled dynamics.
pub fn plant_step(
    problem: &HemisphereProblem,
    state: &[f64; 2],
    u: f64,
    dt: f64,
) -> Result<[f64; 2]> {
    let chart = &problem.chart;
    let field = |_t: f64, c: &[f64]| {
        let s = (1.0 - c[0] * c[0] - c[1] * c[1]).sqrt();
        vec![s * u.cos(), s * u.sin()]
    };
    let ambient = chart.lift(state)?;
    let next = local_coordinates_step(
        chart,
        OneStepMethod::ExplicitEuler,
        &field,
        0.0,
        &ambient,
        dt,
    )?;
    let c = chart.coordinates(&next)?;
    Ok([c[0], c[1]])
}

pub fn run_simulation(cfg: &SimConfig) -> std::result::Result<SimOutcome, SimFailure> {
    run_simulation_with(cfg, false)
}

/// As [`run_simulation`], optionally keeping every decision vector.
pub fn run_simulation_with(
    cfg: &SimConfig,
    keep_decisions: bool,
) -> std::result::Result<SimOutcome, SimFailure> {
    let fail = |sample, source, records: &Vec<TrajectoryRecord>| SimFailure {
        sample,
        source,
        records: records.clone(),
    };
    let empty = Vec::new();
    let (problem, grid, init) = initialize_for(cfg).map_err(|e| fail(0, e, &empty))?;
    let layout = problem.layout(cfg.horizon);
    let mut ctl = NmpcController::new(problem, grid, cfg.solver, init.decision.clone())
        .map_err(|e| fail(0, e, &empty))?;

    let mut state = cfg.params.start();
    let mut records = Vec::new();
    let mut telemetry = Vec::new();
    let mut decisions = Vec::new();
    let mut stop = StopReason::SampleLimit;

    for k in 0..cfg.max_samples {
        let t = k as f64 * cfg.dt;
        let (u, tel) = ctl
            .sample_update(&state, t)
            .map_err(|e| fail(k, e, &records))?;
        let p = layout.params(ctl.decision())[0];
        let ambient = lift(&state).map_err(|e| fail(k, e, &records))?;
        let defect = (ambient.iter().map(|v| v * v).sum::<f64>() - 1.0).abs();
        records.push(TrajectoryRecord {
            t,
            x: ambient[0],
            y: ambient[1],
            z: ambient[2],
            u: u[0],
            u_s0: u[1],
            p,
            norm_f: tel.residual_norm,
            gmres_iters: tel.gmres_iters,
            precond_age: tel.precond_age.unwrap_or(f64::NAN),
            precond_refreshed: tel.precond_refreshed,
            sphere_defect: defect,
        });
        telemetry.push(tel);
        if keep_decisions {
            decisions.push(ctl.decision().to_vec());
        }
        if !tel_is_finite(records.last().unwrap()) {
            return Err(fail(k, Error::NonFinite("controller telemetry"), &records));
        }
        state = plant_step(&problem, &state, u[0], cfg.dt).map_err(|e| fail(k, e, &records))?;
        if p <= cfg.p_stop {
            stop = StopReason::TravelTimeReached;
            break;
        }
    }

    Ok(SimOutcome {
        init,
        records,
        telemetry,
        stop,
        final_state: state,
        decisions,
    })
}

fn tel_is_finite(r: &TrajectoryRecord) -> bool {
    [r.u, r.u_s0, r.p, r.norm_f].iter().all(|v| v.is_finite())
}

/// Iteration statistics of a preconditioned and an unpreconditioned run.
#[derive(Debug, Clone)]
pub struct PrecondComparison {
    pub iters_on: Vec<usize>,
    pub iters_off: Vec<usize>,
    pub mean_on: f64,
    pub mean_off: f64,
    /// Iteration counts at the samples where the preconditioner was rebuilt.
    pub post_refresh_on: Vec<usize>,
    /// Largest chart-state distance between the two runs over common samples.
    pub max_state_gap: f64,
    pub on: SimOutcome,
    pub off: SimOutcome,
}

impl PrecondComparison {
    pub fn preconditioning_helps(&self) -> bool {
        self.mean_on < self.mean_off
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sample,t,iters_on,iters_off");
        let n = self.iters_on.len().max(self.iters_off.len());
        for k in 0..n {
            let cell = |v: &Vec<usize>| v.get(k).map(|i| i.to_string()).unwrap_or_default();
            let t = self
                .on
                .records
                .get(k)
                .or_else(|| self.off.records.get(k))
                .map(|r| r.t)
                .unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{k},{t:.6},{},{}",
                cell(&self.iters_on),
                cell(&self.iters_off)
            );
        }
        let _ = writeln!(s, "mean,,{:.4},{:.4}", self.mean_on, self.mean_off);
        s
    }
}

fn mean(v: &[usize]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

pub fn compare_preconditioning(
    cfg: &SimConfig,
) -> std::result::Result<PrecondComparison, SimFailure> {
    let mut with = cfg.clone();
    with.solver.precondition = true;
    let mut without = cfg.clone();
    without.solver.precondition = false;
    let on = run_simulation(&with)?;
    let off = run_simulation(&without)?;
    let iters = |o: &SimOutcome| o.records.iter().map(|r| r.gmres_iters).collect::<Vec<_>>();
    let iters_on = iters(&on);
    let iters_off = iters(&off);
    let post_refresh_on = on
        .records
        .iter()
        .filter(|r| r.precond_refreshed)
        .map(|r| r.gmres_iters)
        .collect();
    let max_state_gap = on
        .records
        .iter()
        .zip(&off.records)
        .map(|(a, b)| (a.x - b.x).hypot(a.y - b.y))
        .fold(0.0, f64::max);
    Ok(PrecondComparison {
        mean_on: mean(&iters_on),
        mean_off: mean(&iters_off),
        iters_on,
        iters_off,
        post_refresh_on,
        max_state_gap,
        on,
        off,
    })
}

pub const CSV_FILES: [&str; 5] = [
    "trajectory.csv",
    "control.csv",
    "gmres.csv",
    "residual.csv",
    "trajectory3d.csv",
];

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the plot CSVs into `dir` (created if missing) and returns their paths.
pub fn emit_plot_data(records: &[TrajectoryRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path, e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;

    let mut bodies = [
        String::from("t,x,y,z,p\n"),
        String::from("t,u,u_s0\n"),
        String::from("t,iters,precond_age\n"),
        String::from("t,normF\n"),
        String::from("t,x,y,z\n"),
    ];
    for r in records {
        let t = fmt(r.t);
        let (x, y, z) = (fmt(r.x), fmt(r.y), fmt(r.z));
        let _ = writeln!(bodies[0], "{t},{x},{y},{z},{}", fmt(r.p));
        let _ = writeln!(bodies[1], "{t},{},{}", fmt(r.u), fmt(r.u_s0));
        let _ = writeln!(bodies[2], "{t},{},{}", r.gmres_iters, fmt(r.precond_age));
        let _ = writeln!(bodies[3], "{t},{}", fmt(r.norm_f));
        let _ = writeln!(bodies[4], "{t},{x},{y},{z}");
    }

    let mut paths = Vec::with_capacity(CSV_FILES.len());
    for (name, body) in CSV_FILES.iter().zip(&bodies) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
