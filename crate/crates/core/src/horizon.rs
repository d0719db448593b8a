//! Discretized finite-horizon optimal control problems.
//!
//! A problem is described by an [`OcpDefinition`]. For a given measured state
//! `x0` and stacked unknown `U = [u | μ | ν | p]` the optimality system is
//! evaluated by
//!
//! 1. a forward recursion `x_{i+1} = Φ_i(τ_i, x_i, u_i, p)` using the
//!    problem's (structure-preserving) one-step map,
//! 2. a backward costate recursion starting from
//!    `λ_N = φ_xᵀ + ψ_xᵀν` with `λ_i = λ_{i+1} + H_xᵀ(τ_i, x_i, λ_{i+1}, u_i, μ_i, p)·Δτ_i`,
//!    where `H_x` is built from `∂f/∂x` rather than the derivative of the
//!    one-step map,
//! 3. stacking `[H_uᵀΔτ_i | C·Δτ_i | ψ(x_N) | φ_pᵀ + ψ_pᵀν + Σ H_pᵀΔτ_i]`.

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};

/// Dimensions of the blocks of an optimal control problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// State.
    pub n_x: usize,
    /// Control, slack components included.
    pub n_u: usize,
    /// Equality path constraint `C`.
    pub n_mu: usize,
    /// Terminal constraint `ψ`.
    pub n_nu: usize,
    /// Free parameters.
    pub n_p: usize,
}

/// Callback bundle of a finite-horizon problem in fictitious time `τ`.
///
/// The Hamiltonian is `H = L + λᵀf + μᵀC`. All callbacks must be pure
/// functions of their arguments.
pub trait OcpDefinition {
    fn dims(&self) -> Dims;

    /// State dynamics `f(τ, x, u, p)`.
    fn dynamics(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64>;
    /// `∂f/∂x`, `n_x × n_x`.
    fn dynamics_jacobian(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> Matrix;
    /// Running cost `L(τ, x, u, p)`.
    fn running_cost(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64;
    /// Terminal cost `φ(x_N, p)`.
    fn terminal_cost(&self, x: &[f64], p: &[f64]) -> f64;
    /// Equality path constraint `C(τ, x, u, p)`.
    fn constraint(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64>;
    /// Terminal constraint `ψ(x_N, p)`.
    fn terminal_constraint(&self, x: &[f64], p: &[f64]) -> Vec<f64>;

    fn hamiltonian_x(
        &self,
        tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64>;
    fn hamiltonian_u(
        &self,
        tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64>;
    fn hamiltonian_p(
        &self,
        tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64>;

    fn terminal_cost_x(&self, x: &[f64], p: &[f64]) -> Vec<f64>;
    fn terminal_cost_p(&self, x: &[f64], p: &[f64]) -> Vec<f64>;
    /// `∂ψ/∂x`, `n_nu × n_x`.
    fn terminal_constraint_x(&self, x: &[f64], p: &[f64]) -> Matrix;
    /// `∂ψ/∂p`, `n_nu × n_p`.
    fn terminal_constraint_p(&self, x: &[f64], p: &[f64]) -> Matrix;

    /// One step of the discretized dynamics, `x_i ↦ x_{i+1}`.
    ///
    /// Defaults to explicit Euler; manifold problems override this with a
    /// structure-preserving stepper.
    fn step(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64], dtau: f64) -> Result<Vec<f64>> {
        let f = self.dynamics(tau, x, u, p);
        Ok(x.iter().zip(&f).map(|(xi, fi)| xi + dtau * fi).collect())
    }

    fn hamiltonian(
        &self,
        tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> f64 {
        let f = self.dynamics(tau, x, u, p);
        let c = self.constraint(tau, x, u, p);
        self.running_cost(tau, x, u, p)
            + lambda.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
            + mu.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Rejects states outside the problem's domain.
    fn validate_state(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Projects parameters back into their admissible set after an update.
    fn clamp_parameters(&self, _p: &mut [f64]) {}
}

/// Probes every callback once and checks its output dimensions.
pub fn check_dimensions<P: OcpDefinition + ?Sized>(
    def: &P,
    tau: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
) -> Result<()> {
    let d = def.dims();
    check_len("probe state", d.n_x, x.len())?;
    check_len("probe control", d.n_u, u.len())?;
    check_len("probe parameters", d.n_p, p.len())?;
    let lambda = vec![0.0; d.n_x];
    let mu = vec![0.0; d.n_mu];
    let shape = |what: &'static str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
        check_len(what, rows, m.rows())?;
        check_len(what, cols, m.cols())
    };
    check_len("f", d.n_x, def.dynamics(tau, x, u, p).len())?;
    shape("f_x", &def.dynamics_jacobian(tau, x, u, p), d.n_x, d.n_x)?;
    check_len("C", d.n_mu, def.constraint(tau, x, u, p).len())?;
    check_len("psi", d.n_nu, def.terminal_constraint(x, p).len())?;
    check_len(
        "H_x",
        d.n_x,
        def.hamiltonian_x(tau, x, &lambda, u, &mu, p).len(),
    )?;
    check_len(
        "H_u",
        d.n_u,
        def.hamiltonian_u(tau, x, &lambda, u, &mu, p).len(),
    )?;
    check_len(
        "H_p",
        d.n_p,
        def.hamiltonian_p(tau, x, &lambda, u, &mu, p).len(),
    )?;
    check_len("phi_x", d.n_x, def.terminal_cost_x(x, p).len())?;
    check_len("phi_p", d.n_p, def.terminal_cost_p(x, p).len())?;
    shape("psi_x", &def.terminal_constraint_x(x, p), d.n_nu, d.n_x)?;
    shape("psi_p", &def.terminal_constraint_p(x, p), d.n_nu, d.n_p)?;
    check_len("step", d.n_x, def.step(tau, x, u, p, 1e-3)?.len())?;
    Ok(())
}

/// Fictitious-time grid `0 = τ_0 < τ_1 < … < τ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonGrid {
    steps: Vec<f64>,
    points: Vec<f64>,
}

impl HorizonGrid {
    /// `n` equal steps over `[0, length]`.
    pub fn uniform(n: usize, length: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "horizon needs at least one step".into(),
            ));
        }
        let dtau = length / n as f64;
        let points = (0..=n).map(|i| i as f64 * dtau).collect();
        Self::checked(vec![dtau; n], points)
    }

    pub fn from_steps(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument(
                "horizon needs at least one step".into(),
            ));
        }
        let mut points = Vec::with_capacity(steps.len() + 1);
        let mut acc = 0.0;
        points.push(acc);
        for s in &steps {
            acc += s;
            points.push(acc);
        }
        Self::checked(steps, points)
    }

    fn checked(steps: Vec<f64>, points: Vec<f64>) -> Result<Self> {
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon steps must be positive and finite: {steps:?}"
            )));
        }
        Ok(HorizonGrid { steps, points })
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, i: usize) -> f64 {
        self.steps[i]
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn length(&self) -> f64 {
        self.points[self.steps.len()]
    }
}

/// Index map of the stacked unknown `U` (and of the residual `F`, which
/// shares the layout).
///
/// Blocks are grouped by kind: all control components, then all multipliers
/// `μ`, then `ν`, then `p`. Within the control block the layout is
/// component-major, `[u⁽⁰⁾_0 … u⁽⁰⁾_{N-1}, u⁽¹⁾_0 … u⁽¹⁾_{N-1}, …]`, so a slack
/// control occupies its own contiguous run after the primary control. `μ`
/// follows the same convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub horizon: usize,
    pub dims: Dims,
}

impl DecisionLayout {
    pub fn new(horizon: usize, dims: Dims) -> Self {
        DecisionLayout { horizon, dims }
    }

    /// `n_U = N·n_u + N·n_mu + n_nu + n_p`.
    pub fn len(&self) -> usize {
        self.nu_offset() + self.dims.n_nu + self.dims.n_p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn control_index(&self, stage: usize, component: usize) -> usize {
        debug_assert!(stage < self.horizon && component < self.dims.n_u);
        component * self.horizon + stage
    }

    pub fn multiplier_index(&self, stage: usize, component: usize) -> usize {
        debug_assert!(stage < self.horizon && component < self.dims.n_mu);
        self.horizon * self.dims.n_u + component * self.horizon + stage
    }

    pub fn nu_offset(&self) -> usize {
        self.horizon * (self.dims.n_u + self.dims.n_mu)
    }

    pub fn param_offset(&self) -> usize {
        self.nu_offset() + self.dims.n_nu
    }

    pub fn control(&self, values: &[f64], stage: usize) -> Vec<f64> {
        (0..self.dims.n_u)
            .map(|c| values[self.control_index(stage, c)])
            .collect()
    }

    pub fn set_control(&self, values: &mut [f64], stage: usize, u: &[f64]) {
        for (c, &v) in u.iter().enumerate().take(self.dims.n_u) {
            values[self.control_index(stage, c)] = v;
        }
    }

    pub fn multiplier(&self, values: &[f64], stage: usize) -> Vec<f64> {
        (0..self.dims.n_mu)
            .map(|c| values[self.multiplier_index(stage, c)])
            .collect()
    }

    pub fn set_multiplier(&self, values: &mut [f64], stage: usize, mu: &[f64]) {
        for (c, &v) in mu.iter().enumerate().take(self.dims.n_mu) {
            values[self.multiplier_index(stage, c)] = v;
        }
    }

    pub fn nu<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.nu_offset()..self.param_offset()]
    }

    pub fn nu_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        let (a, b) = (self.nu_offset(), self.param_offset());
        &mut values[a..b]
    }

    pub fn params<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.param_offset()..self.len()]
    }

    pub fn params_mut<'a>(&self, values: &'a mut [f64]) -> &'a mut [f64] {
        let (a, b) = (self.param_offset(), self.len());
        &mut values[a..b]
    }
}

/// States `x_0..x_N` and costates `λ_0..λ_N` along the horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryWorkspace {
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
}

impl TrajectoryWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

fn layout_for<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    values: &[f64],
) -> Result<DecisionLayout> {
    let layout = DecisionLayout::new(grid.len(), def.dims());
    check_len("decision vector", layout.len(), values.len())?;
    Ok(layout)
}

/// Fills `ws.states` with `x_0 = x0` and `x_{i+1} = Φ_i(τ_i, x_i, u_i, p)`.
pub fn forward_recursion<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    values: &[f64],
    ws: &mut TrajectoryWorkspace,
) -> Result<()> {
    let layout = layout_for(def, grid, values)?;
    check_len("initial state", layout.dims.n_x, x0.len())?;
    def.validate_state(x0)?;
    let p = layout.params(values);
    ws.states.clear();
    ws.states.push(x0.to_vec());
    for i in 0..grid.len() {
        let u = layout.control(values, i);
        let next = def.step(grid.point(i), &ws.states[i], &u, p, grid.step(i))?;
        check_len("step output", layout.dims.n_x, next.len())?;
        if !linalg::all_finite(&next) {
            return Err(Error::NonFinite("forward recursion"));
        }
        ws.states.push(next);
    }
    Ok(())
}

/// Fills `ws.costates` from the terminal condition downwards. Requires
/// `ws.states` from [`forward_recursion`].
pub fn backward_recursion<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    values: &[f64],
    ws: &mut TrajectoryWorkspace,
) -> Result<()> {
    let layout = layout_for(def, grid, values)?;
    let n = grid.len();
    check_len("trajectory states", n + 1, ws.states.len())?;
    let p = layout.params(values);
    let nu = layout.nu(values);
    let x_n = &ws.states[n];

    let mut lambda = def.terminal_cost_x(x_n, p);
    let psi_x = def.terminal_constraint_x(x_n, p);
    linalg::axpy(1.0, &psi_x.tr_matvec(nu)?, &mut lambda)?;

    ws.costates.clear();
    ws.costates.resize(n + 1, Vec::new());
    for i in (0..n).rev() {
        let u = layout.control(values, i);
        let mu = layout.multiplier(values, i);
        let hx = def.hamiltonian_x(grid.point(i), &ws.states[i], &lambda, &u, &mu, p);
        let mut next = lambda.clone();
        linalg::axpy(grid.step(i), &hx, &mut next)?;
        ws.costates[i + 1] = std::mem::replace(&mut lambda, next);
    }
    ws.costates[0] = lambda;
    if ws.costates.iter().any(|l| !linalg::all_finite(l)) {
        return Err(Error::NonFinite("backward recursion"));
    }
    Ok(())
}

/// Stacks the optimality residual from populated recursions.
fn stack_residual<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    values: &[f64],
    ws: &TrajectoryWorkspace,
) -> Result<Vec<f64>> {
    let layout = layout_for(def, grid, values)?;
    let n = grid.len();
    let p = layout.params(values);
    let nu = layout.nu(values);
    let x_n = &ws.states[n];
    let mut out = vec![0.0; layout.len()];

    let mut p_row = def.terminal_cost_p(x_n, p);
    linalg::axpy(
        1.0,
        &def.terminal_constraint_p(x_n, p).tr_matvec(nu)?,
        &mut p_row,
    )?;

    for i in 0..n {
        let tau = grid.point(i);
        let dtau = grid.step(i);
        let x = &ws.states[i];
        let lambda = &ws.costates[i + 1];
        let u = layout.control(values, i);
        let mu = layout.multiplier(values, i);

        let hu = def.hamiltonian_u(tau, x, lambda, &u, &mu, p);
        for (c, v) in hu.iter().enumerate() {
            out[layout.control_index(i, c)] = v * dtau;
        }
        let con = def.constraint(tau, x, &u, p);
        for (c, v) in con.iter().enumerate() {
            out[layout.multiplier_index(i, c)] = v * dtau;
        }
        let hp = def.hamiltonian_p(tau, x, lambda, &u, &mu, p);
        linalg::axpy(dtau, &hp, &mut p_row)?;
    }
    let psi = def.terminal_constraint(x_n, p);
    out[layout.nu_offset()..layout.param_offset()].copy_from_slice(&psi);
    out[layout.param_offset()..].copy_from_slice(&p_row);
    if !linalg::all_finite(&out) {
        return Err(Error::NonFinite("residual assembly"));
    }
    Ok(out)
}

/// Evaluates `F[U, x0]` reusing a caller-owned workspace.
pub fn assemble_residual_with<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    values: &[f64],
    ws: &mut TrajectoryWorkspace,
) -> Result<Vec<f64>> {
    forward_recursion(def, grid, x0, values, ws)?;
    backward_recursion(def, grid, values, ws)?;
    stack_residual(def, grid, values, ws)
}

/// Evaluates the optimality residual `F[U, x0]`; its zeros are the KKT points
/// of the discretized problem.
pub fn assemble_residual<P: OcpDefinition + ?Sized>(
    def: &P,
    grid: &HorizonGrid,
    x0: &[f64],
    values: &[f64],
) -> Result<Vec<f64>> {
    assemble_residual_with(def, grid, x0, values, &mut TrajectoryWorkspace::new())
}

pub fn residual_norm(f: &[f64]) -> f64 {
    linalg::norm2(f)
}
