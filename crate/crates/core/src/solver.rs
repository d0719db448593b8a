//! Real-time Newton-Krylov iteration for the horizon optimality system.
//!
//! At every sampling instant the controller performs a fixed number of Newton
//! steps on `F[U, x] = 0`, warm-started from the previous `U`. Each step is
//! solved by GMRES with matrix-free forward-difference Jacobian products. A
//! fully materialized finite-difference Jacobian is LU-factored at a fixed
//! period of simulated time and used as a left preconditioner in between.

use crate::error::{check_len, Error, Result};
use crate::gmres::{gmres_solve, FnOperator, GmresConfig, LinearOperator};
use crate::horizon::{
    assemble_residual_with, DecisionLayout, HorizonGrid, OcpDefinition, TrajectoryWorkspace,
};
use crate::linalg::{self, LuFactors, Matrix};
use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Forward-difference step for Jacobian products and columns.
    pub fd_step: f64,
    pub gmres: GmresConfig,
    /// Simulated seconds between preconditioner rebuilds.
    pub precond_period: f64,
    /// Use the periodic LU preconditioner at all.
    pub precondition: bool,
    pub newton_iters_per_sample: usize,
    /// Residual target of [`initialize`].
    pub init_tol: f64,
    pub init_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            fd_step: 1e-8,
            gmres: GmresConfig {
                max_iters: 20,
                abs_tol: 1e-5,
            },
            precond_period: 0.2,
            precondition: true,
            newton_iters_per_sample: 1,
            init_tol: 1e-8,
            init_max_iters: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fd_step > 0.0
            && self.precond_period > 0.0
            && self.gmres.max_iters >= 1
            && self.gmres.abs_tol > 0.0
            && self.newton_iters_per_sample >= 1
            && self.init_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid solver config: {self:?}"
            )))
        }
    }
}

/// Residual evaluator with its own trajectory workspace.
struct Residual<'a, P: ?Sized> {
    problem: &'a P,
    grid: &'a HorizonGrid,
    x0: &'a [f64],
    ws: RefCell<TrajectoryWorkspace>,
}

impl<'a, P: OcpDefinition + ?Sized> Residual<'a, P> {
    fn new(problem: &'a P, grid: &'a HorizonGrid, x0: &'a [f64]) -> Self {
        Residual {
            problem,
            grid,
            x0,
            ws: RefCell::new(TrajectoryWorkspace::new()),
        }
    }

    fn eval(&self, values: &[f64]) -> Result<Vec<f64>> {
        assemble_residual_with(
            self.problem,
            self.grid,
            self.x0,
            values,
            &mut self.ws.borrow_mut(),
        )
    }

    fn jvp(&self, values: &[f64], f0: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
        check_len("jvp direction", values.len(), v.len())?;
        check_len("jvp base residual", values.len(), f0.len())?;
        let v_norm = linalg::norm2(v);
        if !(v_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "Jacobian-vector product needs a nonzero direction".into(),
            ));
        }
        let scale = linalg::norm2(values).max(1.0);
        let eps = h * scale / v_norm;
        let mut shifted = values.to_vec();
        linalg::axpy(eps, v, &mut shifted)?;
        let f1 = self.eval(&shifted)?;
        Ok(f1.iter().zip(f0).map(|(a, b)| (a - b) / eps).collect())
    }

    fn jacobian(&self, values: &[f64], h: f64) -> Result<Matrix> {
        let f0 = self.eval(values)?;
        let n = values.len();
        let mut shifted = values.to_vec();
        let mut jac = Matrix::zeros(f0.len(), n);
        for j in 0..n {
            shifted[j] = values[j] + h;
            let fj = self.eval(&shifted)?;
            shifted[j] = values[j];
            for (i, (a, b)) in fj.iter().zip(&f0).enumerate() {
                jac[(i, j)] = (a - b) / h;
            }
        }
        Ok(jac)
    }
}

/// Forward-difference approximation of `F_U·v`.
///
/// The step along `v/‖v‖` is `h·max(1, ‖U‖)`; `f0` must equal `F(U)`.
pub fn jacobian_vector_product<P: OcpDefinition + ?Sized>(
    problem: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    values: &[f64],
    f0: &[f64],
    v: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    Residual::new(problem, grid, x0).jvp(values, f0, v, h)
}

/// Fully materialized Jacobian `F_U` by forward differences with step `h`.
pub fn exact_jacobian<P: OcpDefinition + ?Sized>(
    problem: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    values: &[f64],
    h: f64,
) -> Result<Matrix> {
    Residual::new(problem, grid, x0).jacobian(values, h)
}

/// LU factors of a frozen Jacobian and the time they were built.
#[derive(Debug, Clone, Default)]
pub struct PreconditionerState {
    factors: Option<LuFactors>,
    built_at: f64,
    /// Number of successful factorizations.
    pub builds: usize,
    /// Most recent factorization failure, if the current snapshot is unusable.
    pub last_failure: Option<Error>,
}

impl PreconditionerState {
    pub fn is_valid(&self) -> bool {
        self.factors.is_some()
    }

    pub fn built_at(&self) -> Option<f64> {
        self.factors.as_ref().map(|_| self.built_at)
    }

    pub fn factors(&self) -> Option<&LuFactors> {
        self.factors.as_ref()
    }

    /// Elapsed simulated time since the factors were built.
    pub fn age(&self, t_now: f64) -> Option<f64> {
        self.built_at().map(|b| t_now - b)
    }

    fn is_due(&self, t_now: f64, period: f64) -> bool {
        match self.age(t_now) {
            None => true,
            // Sample times are multiples of the sampling step; absorb rounding.
            Some(age) => age >= period - 1e-9 * period.max(1.0),
        }
    }
}

/// Outcome of [`initialize`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub decision: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Accepted step length per Newton iteration.
    pub damping: Vec<f64>,
    /// `‖F‖₂` at the guess and after every iteration.
    pub residual_history: Vec<f64>,
}

/// Solves `F(U, x0) = 0` from `guess` by damped Newton with the full
/// finite-difference Jacobian and LU solves.
pub fn initialize<P: OcpDefinition + ?Sized>(
    problem: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    guess: &[f64],
    cfg: &SolverConfig,
) -> Result<InitReport> {
    cfg.validate()?;
    let layout = DecisionLayout::new(grid.len(), problem.dims());
    check_len("initial guess", layout.len(), guess.len())?;
    problem.validate_state(x0)?;
    let residual = Residual::new(problem, grid, x0);

    let mut values = guess.to_vec();
    problem.clamp_parameters(layout.params_mut(&mut values));
    let mut f = residual.eval(&values)?;
    let mut norm = linalg::norm2(&f);
    let mut history = vec![norm];
    let mut damping = Vec::new();
    let fail = |iterations, residual, damping: Vec<f64>| Error::InitializationFailure {
        iterations,
        residual,
        damping,
    };

    for iter in 0..cfg.init_max_iters {
        if norm <= cfg.init_tol {
            return Ok(InitReport {
                decision: values,
                residual_norm: norm,
                iterations: iter,
                damping,
                residual_history: history,
            });
        }
        let jac = residual.jacobian(&values, cfg.fd_step)?;
        let lu = match linalg::lu_factor(&jac) {
            Ok(lu) => lu,
            Err(_) => return Err(fail(iter, norm, damping)),
        };
        let mut dir = lu.solve(&f)?;
        linalg::scale(-1.0, &mut dir);

        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial = values.clone();
            linalg::axpy(alpha, &dir, &mut trial)?;
            problem.clamp_parameters(layout.params_mut(&mut trial));
            if let Ok(ft) = residual.eval(&trial) {
                let nt = linalg::norm2(&ft);
                if nt <= (1.0 - 1e-4 * alpha) * norm {
                    break Some((trial, ft, nt));
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                break None;
            }
        };
        match accepted {
            Some((trial, ft, nt)) => {
                values = trial;
                f = ft;
                norm = nt;
                damping.push(alpha);
                history.push(norm);
            }
            None => return Err(fail(iter + 1, norm, damping)),
        }
    }
    if norm <= cfg.init_tol {
        Ok(InitReport {
            decision: values,
            residual_norm: norm,
            iterations: cfg.init_max_iters,
            damping,
            residual_history: history,
        })
    } else {
        Err(fail(cfg.init_max_iters, norm, damping))
    }
}

/// Per-sample controller telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTelemetry {
    pub t: f64,
    /// GMRES iterations summed over the Newton steps of this sample.
    pub gmres_iters: usize,
    /// Every GMRES solve of this sample met its tolerance.
    pub gmres_converged: bool,
    /// Residual reported by the last GMRES solve.
    pub gmres_residual: f64,
    /// `‖F‖₂` at the warm start, before this sample's updates.
    pub residual_before: f64,
    /// `‖F‖₂` after this sample's updates.
    pub residual_norm: f64,
    pub u_applied: Vec<f64>,
    /// Age of the preconditioner used, `None` when running unpreconditioned.
    pub precond_age: Option<f64>,
    pub precond_refreshed: bool,
    /// The preconditioner rebuild failed (singular snapshot).
    pub precond_failed: bool,
    /// `‖ΔU‖₂` accumulated over this sample.
    pub step_norm: f64,
}

/// Warm-started controller state for one control loop.
#[derive(Debug, Clone)]
pub struct NmpcController<P> {
    problem: P,
    grid: HorizonGrid,
    layout: DecisionLayout,
    cfg: SolverConfig,
    values: Vec<f64>,
    precond: PreconditionerState,
    last_residual_norm: f64,
    last_gmres_iters: usize,
}

impl<P: OcpDefinition> NmpcController<P> {
    /// Wraps an initialized decision vector (see [`initialize`]).
    pub fn new(problem: P, grid: HorizonGrid, cfg: SolverConfig, values: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = DecisionLayout::new(grid.len(), problem.dims());
        check_len("controller decision vector", layout.len(), values.len())?;
        Ok(NmpcController {
            problem,
            grid,
            layout,
            cfg,
            values,
            precond: PreconditionerState::default(),
            last_residual_norm: f64::NAN,
            last_gmres_iters: 0,
        })
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn grid(&self) -> &HorizonGrid {
        &self.grid
    }

    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn decision(&self) -> &[f64] {
        &self.values
    }

    pub fn preconditioner(&self) -> &PreconditionerState {
        &self.precond
    }

    pub fn last_residual_norm(&self) -> f64 {
        self.last_residual_norm
    }

    pub fn last_gmres_iters(&self) -> usize {
        self.last_gmres_iters
    }

    /// First-stage control `u_0` of the current decision vector.
    pub fn first_control(&self) -> Vec<f64> {
        self.layout.control(&self.values, 0)
    }

    /// Rebuilds the preconditioner if it is missing or at least one period old.
    /// Returns whether a rebuild was attempted.
    pub fn refresh_preconditioner(&mut self, x: &[f64], t_now: f64) -> Result<bool> {
        if !self.precond.is_due(t_now, self.cfg.precond_period) {
            return Ok(false);
        }
        let jac = exact_jacobian(&self.problem, &self.grid, x, &self.values, self.cfg.fd_step)?;
        match linalg::lu_factor(&jac) {
            Ok(lu) => {
                self.precond.factors = Some(lu);
                self.precond.built_at = t_now;
                self.precond.builds += 1;
                self.precond.last_failure = None;
            }
            Err(e @ Error::SingularMatrix { .. }) => {
                self.precond.factors = None;
                self.precond.last_failure = Some(e);
            }
            Err(e) => return Err(e),
        }
        Ok(true)
    }

    /// Advances `U` by Newton-Krylov steps for the measured state `x` and
    /// returns the first-stage control to apply.
    pub fn sample_update(&mut self, x: &[f64], t_now: f64) -> Result<(Vec<f64>, SampleTelemetry)> {
        self.problem.validate_state(x)?;
        let mut refreshed = false;
        if self.cfg.precondition {
            refreshed = self.refresh_preconditioner(x, t_now)?;
        }
        let precond_failed = self.cfg.precondition && !self.precond.is_valid();
        let precond_age = if self.cfg.precondition {
            self.precond.age(t_now)
        } else {
            None
        };

        let residual = Residual::new(&self.problem, &self.grid, x);
        let mut f = residual.eval(&self.values)?;
        let residual_before = linalg::norm2(&f);
        let mut gmres_iters = 0;
        let mut gmres_converged = true;
        let mut gmres_residual = 0.0;
        let mut step_norm = 0.0;
        let n = self.values.len();

        for _ in 0..self.cfg.newton_iters_per_sample {
            let base = self.values.clone();
            let f0 = f.clone();
            let h = self.cfg.fd_step;
            let op = FnOperator::new(n, |v: &[f64]| residual.jvp(&base, &f0, v, h));
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let precond: Option<&dyn LinearOperator> = if self.cfg.precondition {
                self.precond.factors().map(|lu| lu as &dyn LinearOperator)
            } else {
                None
            };
            let report = gmres_solve(&op, &rhs, &vec![0.0; n], precond, &self.cfg.gmres)?;
            gmres_iters += report.iters_used;
            gmres_converged &= report.converged;
            gmres_residual = report.final_residual_norm;

            let mut next = base;
            linalg::axpy(1.0, &report.solution, &mut next)?;
            self.problem
                .clamp_parameters(self.layout.params_mut(&mut next));
            step_norm += linalg::norm2(&linalg::sub(&next, &self.values)?);
            f = residual.eval(&next)?;
            self.values = next;
        }

        let residual_norm = linalg::norm2(&f);
        self.last_residual_norm = residual_norm;
        self.last_gmres_iters = gmres_iters;
        let u_applied = self.first_control();
        let telemetry = SampleTelemetry {
            t: t_now,
            gmres_iters,
            gmres_converged,
            gmres_residual,
            residual_before,
            residual_norm,
            u_applied: u_applied.clone(),
            precond_age,
            precond_refreshed: refreshed,
            precond_failed,
            step_norm,
        };
        Ok((u_applied, telemetry))
    }
}
