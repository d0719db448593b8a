//! Minimum-time motion on the unit upper hemisphere with a banded heading.
//!
//! The plant moves on the unit sphere,
//!
//! ```text
//! d/dt (x, y, z) = (z·cos u, z·sin u, −x·cos u − y·sin u),
//! ```
//!
//! and the heading is confined to `c_u − r_u ≤ u ≤ c_u + r_u` through a slack
//! `u_s` with `(u − c_u)² + u_s² − r_u² = 0`. The horizon is rescaled to
//! `τ ∈ [0, 1]` with the travel time `p = t_f − t_0` as the single free
//! parameter, and the state is carried in the chart coordinates `(x, y)`
//! of the upper hemisphere. The horizon problem is therefore
//!
//! ```text
//! f = p·√(1 − x² − y²)·(cos u, sin u),   L = −p·w_s·u_s,   C = p·((u − c_u)² + u_s² − r_u²),
//! φ = p,   ψ = (x − x_f, y − y_f).
//! ```

use crate::error::{check_len, Error, Result};
use crate::horizon::{DecisionLayout, Dims, HorizonGrid, OcpDefinition};
use crate::integrators::{
    local_coordinates_step, ManifoldChart, OneStepMethod, UpperHemisphereChart,
};
use crate::linalg::Matrix;

/// Band, weight and endpoints of the hemisphere problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereParams {
    /// Center of the admissible heading band (rad).
    pub c_u: f64,
    /// Half-width of the heading band (rad).
    pub r_u: f64,
    /// Slack weight.
    pub w_s: f64,
    pub x0: f64,
    pub y0: f64,
    pub x_f: f64,
    pub y_f: f64,
}

impl Default for HemisphereParams {
    /// The reference configuration. The start is `(−0.5, −0.5)`: with the
    /// heading band `[0.4, 0.6]` the chart velocity has `ẏ > 0`, so the target
    /// `(0.5, 0)` is only reachable from below.
    fn default() -> Self {
        HemisphereParams {
            c_u: 0.5,
            r_u: 0.1,
            w_s: 0.005,
            x0: -0.5,
            y0: -0.5,
            x_f: 0.5,
            y_f: 0.0,
        }
    }
}

impl HemisphereParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.r_u > 0.0) {
            return bad(format!("r_u must be positive, got {}", self.r_u));
        }
        if !(self.x0 * self.x0 + self.y0 * self.y0 < 1.0) {
            return bad(format!(
                "start ({}, {}) is outside the chart",
                self.x0, self.y0
            ));
        }
        if !(self.x_f * self.x_f + self.y_f * self.y_f < 1.0) {
            return bad(format!(
                "target ({}, {}) is outside the chart",
                self.x_f, self.y_f
            ));
        }
        if ![self.c_u, self.w_s].iter().all(|v| v.is_finite()) {
            return bad("c_u and w_s must be finite".into());
        }
        Ok(())
    }

    pub fn start(&self) -> [f64; 2] {
        [self.x0, self.y0]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.x_f, self.y_f]
    }

    /// Lower and upper edge of the heading band.
    pub fn band(&self) -> (f64, f64) {
        (self.c_u - self.r_u, self.c_u + self.r_u)
    }
}

/// Right-hand side of the plant on the sphere.
pub fn ambient_dynamics(state: &[f64; 3], u: f64) -> [f64; 3] {
    let [x, y, z] = *state;
    let (s, c) = u.sin_cos();
    [z * c, z * s, -x * c - y * s]
}

/// Chart dynamics scaled by the travel time `p`.
pub fn chart_dynamics(coords: &[f64; 2], u: f64, p: f64) -> Result<[f64; 2]> {
    let height = UpperHemisphereChart { z_min: 0.0 }.height(coords[0], coords[1])?;
    let (s, c) = u.sin_cos();
    Ok([p * height * c, p * height * s])
}

/// Slack form of the heading band: `(u − c_u)² + u_s² − r_u²`.
pub fn constraint_c(u: f64, u_s: f64, params: &HemisphereParams) -> f64 {
    (u - params.c_u).powi(2) + u_s * u_s - params.r_u * params.r_u
}

pub fn terminal_psi(coords: &[f64; 2], params: &HemisphereParams) -> [f64; 2] {
    [coords[0] - params.x_f, coords[1] - params.y_f]
}

/// Terminal cost `φ = p` and physical-time running cost `L = −w_s·u_s`.
pub fn cost_terms(p: f64, u_s: f64, params: &HemisphereParams) -> (f64, f64) {
    (p, -params.w_s * u_s)
}

/// Lifts chart coordinates to the sphere.
pub fn lift(coords: &[f64; 2]) -> Result<[f64; 3]> {
    let z = UpperHemisphereChart { z_min: 0.0 }.height(coords[0], coords[1])?;
    Ok([coords[0], coords[1], z])
}

/// Arc length between two points of the unit sphere.
pub fn great_circle_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

/// The hemisphere problem as a horizon [`OcpDefinition`] in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereProblem {
    pub params: HemisphereParams,
    pub chart: UpperHemisphereChart,
    /// Lower bound enforced on the travel time after updates.
    pub p_min: f64,
}

impl HemisphereProblem {
    pub const DIMS: Dims = Dims {
        n_x: 2,
        n_u: 2,
        n_mu: 1,
        n_nu: 2,
        n_p: 1,
    };

    pub fn new(params: HemisphereParams) -> Self {
        HemisphereProblem {
            params,
            chart: UpperHemisphereChart::default(),
            p_min: 1e-3,
        }
    }

    fn height(x: &[f64]) -> f64 {
        (1.0 - x[0] * x[0] - x[1] * x[1]).sqrt()
    }

    pub fn layout(&self, horizon: usize) -> DecisionLayout {
        DecisionLayout::new(horizon, Self::DIMS)
    }

    /// Structured starting point for the initial solve: heading at the band
    /// center, slack at the band radius (so every `C` row vanishes), the
    /// matching multiplier `μ = w_s/(2 r_u)`, `ν = 0`, and `p` equal to the
    /// arc length from `start` to the target.
    pub fn initial_guess(&self, horizon: usize, start: &[f64; 2]) -> Result<Vec<f64>> {
        let prm = &self.params;
        let layout = self.layout(horizon);
        let mut values = vec![0.0; layout.len()];
        for i in 0..horizon {
            layout.set_control(&mut values, i, &[prm.c_u, prm.r_u]);
            layout.set_multiplier(&mut values, i, &[prm.w_s / (2.0 * prm.r_u)]);
        }
        let distance = great_circle_distance(&lift(start)?, &lift(&prm.target())?);
        layout.params_mut(&mut values)[0] = distance.max(self.p_min);
        Ok(values)
    }
}

impl OcpDefinition for HemisphereProblem {
    fn dims(&self) -> Dims {
        Self::DIMS
    }

    fn dynamics(&self, _tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        let s = Self::height(x);
        vec![p[0] * s * u[0].cos(), p[0] * s * u[0].sin()]
    }

    fn dynamics_jacobian(&self, _tau: f64, x: &[f64], u: &[f64], p: &[f64]) -> Matrix {
        let s = Self::height(x);
        let (sin, cos) = u[0].sin_cos();
        let (dx, dy) = (-x[0] / s, -x[1] / s);
        let mut j = Matrix::zeros(2, 2);
        j[(0, 0)] = p[0] * dx * cos;
        j[(0, 1)] = p[0] * dy * cos;
        j[(1, 0)] = p[0] * dx * sin;
        j[(1, 1)] = p[0] * dy * sin;
        j
    }

    fn running_cost(&self, _tau: f64, _x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        p[0] * cost_terms(p[0], u[1], &self.params).1
    }

    fn terminal_cost(&self, _x: &[f64], p: &[f64]) -> f64 {
        cost_terms(p[0], 0.0, &self.params).0
    }

    fn constraint(&self, _tau: f64, _x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        vec![p[0] * constraint_c(u[0], u[1], &self.params)]
    }

    fn terminal_constraint(&self, x: &[f64], _p: &[f64]) -> Vec<f64> {
        terminal_psi(&[x[0], x[1]], &self.params).to_vec()
    }

    fn hamiltonian_x(
        &self,
        _tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        _mu: &[f64],
        p: &[f64],
    ) -> Vec<f64> {
        let s = Self::height(x);
        let (sin, cos) = u[0].sin_cos();
        let along = cos * lambda[0] + sin * lambda[1];
        vec![-p[0] * x[0] / s * along, -p[0] * x[1] / s * along]
    }

    fn hamiltonian_u(
        &self,
        _tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64> {
        let prm = &self.params;
        let s = Self::height(x);
        let (sin, cos) = u[0].sin_cos();
        vec![
            p[0] * (s * (-sin * lambda[0] + cos * lambda[1]) + 2.0 * (u[0] - prm.c_u) * mu[0]),
            p[0] * (2.0 * mu[0] * u[1] - prm.w_s),
        ]
    }

    fn hamiltonian_p(
        &self,
        _tau: f64,
        x: &[f64],
        lambda: &[f64],
        u: &[f64],
        mu: &[f64],
        _p: &[f64],
    ) -> Vec<f64> {
        let prm = &self.params;
        let s = Self::height(x);
        let (sin, cos) = u[0].sin_cos();
        vec![
            s * (cos * lambda[0] + sin * lambda[1]) + mu[0] * constraint_c(u[0], u[1], prm)
                - prm.w_s * u[1],
        ]
    }

    fn terminal_cost_x(&self, _x: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn terminal_cost_p(&self, _x: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    fn terminal_constraint_x(&self, _x: &[f64], _p: &[f64]) -> Matrix {
        Matrix::identity(2)
    }

    fn terminal_constraint_p(&self, _x: &[f64], _p: &[f64]) -> Matrix {
        Matrix::zeros(2, 1)
    }

    /// Explicit Euler in the chart, lifted back to the sphere.
    fn step(&self, tau: f64, x: &[f64], u: &[f64], p: &[f64], dtau: f64) -> Result<Vec<f64>> {
        check_len("hemisphere state", 2, x.len())?;
        let field = |t: f64, z: &[f64]| self.dynamics(t, z, u, p);
        let ambient = self.chart.lift(x)?;
        let next = local_coordinates_step(
            &self.chart,
            OneStepMethod::ExplicitEuler,
            &field,
            tau,
            &ambient,
            dtau,
        )?;
        self.chart.coordinates(&next)
    }

    fn validate_state(&self, x: &[f64]) -> Result<()> {
        check_len("hemisphere state", 2, x.len())?;
        self.chart.check_domain(x[0], x[1])
    }

    fn clamp_parameters(&self, p: &mut [f64]) {
        if !(p[0] >= self.p_min) {
            p[0] = self.p_min;
        }
    }
}

/// The optimality residual of the hemisphere problem written out directly,
/// independently of the generic assembly in [`crate::horizon`].
///
/// Row blocks, top to bottom: heading stationarity, slack stationarity, band
/// constraint, terminal position, travel-time stationarity.
pub fn residual_rows(
    values: &[f64],
    start: &[f64; 2],
    horizon: usize,
    params: &HemisphereParams,
) -> Result<Vec<f64>> {
    let n = horizon;
    check_len("hemisphere decision vector", 3 * n + 3, values.len())?;
    let chart = UpperHemisphereChart::default();
    let dtau = 1.0 / n as f64;
    let (u, rest) = values.split_at(n);
    let (us, rest) = rest.split_at(n);
    let (mu, rest) = rest.split_at(n);
    let (nu1, nu2, p) = (rest[0], rest[1], rest[2]);

    let mut xs = vec![start[0]];
    let mut ys = vec![start[1]];
    let mut heights = Vec::with_capacity(n);
    chart.check_domain(start[0], start[1])?;
    for i in 0..n {
        let s = (1.0 - xs[i] * xs[i] - ys[i] * ys[i]).sqrt();
        heights.push(s);
        let (x1, y1) = (
            xs[i] + dtau * (p * s * u[i].cos()),
            ys[i] + dtau * (p * s * u[i].sin()),
        );
        chart.check_domain(x1, y1)?;
        xs.push(x1);
        ys.push(y1);
    }

    let mut l1 = vec![0.0; n + 1];
    let mut l2 = vec![0.0; n + 1];
    l1[n] = nu1;
    l2[n] = nu2;
    for i in (0..n).rev() {
        let along = u[i].cos() * l1[i + 1] + u[i].sin() * l2[i + 1];
        l1[i] = l1[i + 1] - dtau * p * xs[i] / heights[i] * along;
        l2[i] = l2[i + 1] - dtau * p * ys[i] / heights[i] * along;
    }

    let mut rows = vec![0.0; 3 * n + 3];
    let mut sum = 0.0;
    for i in 0..n {
        let s = heights[i];
        let (sin, cos) = u[i].sin_cos();
        let band = (u[i] - params.c_u).powi(2) + us[i] * us[i] - params.r_u * params.r_u;
        rows[i] = dtau
            * p
            * (s * (-sin * l1[i + 1] + cos * l2[i + 1]) + 2.0 * (u[i] - params.c_u) * mu[i]);
        rows[n + i] = dtau * p * (2.0 * mu[i] * us[i] - params.w_s);
        rows[2 * n + i] = dtau * p * band;
        sum += s * (cos * l1[i + 1] + sin * l2[i + 1]) + mu[i] * band - params.w_s * us[i];
    }
    rows[3 * n] = xs[n] - params.x_f;
    rows[3 * n + 1] = ys[n] - params.y_f;
    rows[3 * n + 2] = dtau * sum + 1.0;
    Ok(rows)
}

/// Convenience: `residual_rows` for a grid, checking that it is uniform on `[0, 1]`.
pub fn residual_rows_on(
    values: &[f64],
    start: &[f64; 2],
    grid: &HorizonGrid,
    params: &HemisphereParams,
) -> Result<Vec<f64>> {
    let n = grid.len();
    let uniform = grid
        .steps()
        .iter()
        .all(|s| (s - 1.0 / n as f64).abs() <= 1e-15);
    if !uniform {
        return Err(Error::InvalidArgument(
            "hemisphere rows assume a uniform grid on [0, 1]".into(),
        ));
    }
    residual_rows(values, start, n, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::horizon::{
        assemble_residual, backward_recursion, check_dimensions, forward_recursion,
        TrajectoryWorkspace,
    };
    use std::f64::consts::FRAC_PI_2;

    fn params() -> HemisphereParams {
        HemisphereParams::default()
    }

    #[test]
    fn ambient_dynamics_examples() {
        assert_eq!(ambient_dynamics(&[0.0, 0.0, 1.0], 0.0), [1.0, 0.0, 0.0]);
        assert_eq!(ambient_dynamics(&[1.0, 0.0, 0.0], 0.0), [0.0, 0.0, -1.0]);
    }

    #[test]
    fn chart_dynamics_examples() {
        assert_eq!(chart_dynamics(&[0.0, 0.0], 0.0, 1.0).unwrap(), [1.0, 0.0]);
        let v = chart_dynamics(&[0.0, 0.0], FRAC_PI_2, 2.0).unwrap();
        assert!(v[0].abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
        let v = chart_dynamics(&[0.6, 0.0], 0.0, 1.0).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-15 && v[1] == 0.0);
        assert!(matches!(
            chart_dynamics(&[0.8, 0.7], 0.0, 1.0),
            Err(Error::ChartDomainViolation { .. })
        ));
    }

    #[test]
    fn band_constraint_examples() {
        let prm = params();
        assert!(constraint_c(prm.c_u + prm.r_u, 0.0, &prm).abs() < 1e-16);
        assert_eq!(constraint_c(prm.c_u, prm.r_u, &prm), 0.0);
        assert!((constraint_c(prm.c_u, 0.0, &prm) + 0.01).abs() < 1e-16);
    }

    #[test]
    fn terminal_and_cost_examples() {
        let prm = params();
        assert_eq!(terminal_psi(&[0.5, 0.0], &prm), [0.0, 0.0]);
        assert_eq!(terminal_psi(&[0.5, 0.1], &prm), [0.0, 0.1]);
        assert_eq!(cost_terms(1.2332, 0.0, &prm), (1.2332, 0.0));
        assert!((cost_terms(1.0, 0.1, &prm).1 + 5e-4).abs() < 1e-18);
    }

    #[test]
    fn height_mismatch_bounded_by_chart_error() {
        // Lipschitz bound of the lift on the truncated chart.
        let prm = params();
        let target = lift(&prm.target()).unwrap();
        let z_min = UpperHemisphereChart::default().z_min;
        for (dx, dy) in [(1e-3, 0.0), (0.0, -2e-3), (5e-3, 5e-3), (-1e-2, 3e-3)] {
            let end = [prm.x_f + dx, prm.y_f + dy];
            let psi = terminal_psi(&end, &prm);
            let z = lift(&end).unwrap()[2];
            let bound = 2.0 * psi[0].abs().max(psi[1].abs()) / z_min;
            assert!((z - target[2]).abs() <= bound);
        }
    }

    #[test]
    fn dimensions_probe() {
        let prob = HemisphereProblem::new(params());
        check_dimensions(&prob, 0.0, &[0.1, 0.2], &[0.5, 0.1], &[1.0]).unwrap();
        assert_eq!(prob.layout(20).len(), 63);
    }

    #[test]
    fn forward_recursion_hand_iterated() {
        let prob = HemisphereProblem::new(params());
        let grid = HorizonGrid::uniform(2, 1.0).unwrap();
        let layout = prob.layout(2);
        let mut values = vec![0.0; layout.len()];
        layout.params_mut(&mut values)[0] = 1.0;
        let mut ws = TrajectoryWorkspace::new();
        forward_recursion(&prob, &grid, &[0.0, 0.0], &values, &mut ws).unwrap();
        assert_eq!(ws.states[0], vec![0.0, 0.0]);
        assert_eq!(ws.states[1], vec![0.5, 0.0]);
        let expected = 0.5 + 0.5 * 0.75_f64.sqrt();
        assert!((ws.states[2][0] - expected).abs() < 1e-15);
        assert!((ws.states[2][0] - 0.9330).abs() < 1e-4);
        for s in &ws.states {
            let a = lift(&[s[0], s[1]]).unwrap();
            assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn costate_terminal_value_is_nu() {
        let prob = HemisphereProblem::new(params());
        let grid = HorizonGrid::uniform(4, 1.0).unwrap();
        let layout = prob.layout(4);
        let mut values = prob.initial_guess(4, &params().start()).unwrap();
        layout.nu_mut(&mut values).copy_from_slice(&[0.3, -0.7]);
        let mut ws = TrajectoryWorkspace::new();
        forward_recursion(&prob, &grid, &params().start(), &values, &mut ws).unwrap();
        backward_recursion(&prob, &grid, &values, &mut ws).unwrap();
        assert_eq!(ws.costates[4], vec![0.3, -0.7]);
    }

    #[test]
    fn costate_constant_across_apex_node() {
        // At the apex both weights x/√(1−x²−y²) and y/√(…) vanish.
        let prob = HemisphereProblem::new(params());
        let grid = HorizonGrid::uniform(3, 1.0).unwrap();
        let layout = prob.layout(3);
        let mut values = prob.initial_guess(3, &[0.0, 0.0]).unwrap();
        layout.nu_mut(&mut values).copy_from_slice(&[1.5, 2.5]);
        let mut ws = TrajectoryWorkspace::new();
        forward_recursion(&prob, &grid, &[0.0, 0.0], &values, &mut ws).unwrap();
        backward_recursion(&prob, &grid, &values, &mut ws).unwrap();
        assert_eq!(ws.costates[0], ws.costates[1]);
        assert_ne!(ws.costates[1], ws.costates[2]);
    }

    #[test]
    fn initial_guess_satisfies_band_rows() {
        let prm = params();
        let prob = HemisphereProblem::new(prm);
        let n = 20;
        let values = prob.initial_guess(n, &prm.start()).unwrap();
        let layout = prob.layout(n);
        for i in 0..n {
            let u = layout.control(&values, i);
            assert_eq!(constraint_c(u[0], u[1], &prm), 0.0);
            let mu = layout.multiplier(&values, i)[0];
            assert!((mu - 0.025).abs() < 1e-16);
        }
        let rows = residual_rows(&values, &prm.start(), n, &prm).unwrap();
        assert!(rows[2 * n..3 * n].iter().all(|&r| r == 0.0));
        // Slack stationarity rows vanish too: 2·μ·r_u = w_s.
        assert!(rows[n..2 * n].iter().all(|r| r.abs() < 1e-18));
        let expected_p =
            great_circle_distance(&lift(&prm.start()).unwrap(), &lift(&prm.target()).unwrap());
        assert_eq!(layout.params(&values)[0], expected_p);
    }

    #[test]
    fn constant_term_of_travel_time_row() {
        let prm = params();
        let n = 5;
        let mut values = vec![0.0; 3 * n + 3];
        for u in values.iter_mut().take(n) {
            *u = 0.5;
        }
        values[3 * n + 2] = 1.0;
        let rows = residual_rows(&values, &prm.start(), n, &prm).unwrap();
        assert_eq!(rows[3 * n + 2], 1.0);
    }

    #[test]
    fn residual_rows_match_generic_assembly() {
        let prm = params();
        let prob = HemisphereProblem::new(prm);
        let n = 20;
        let grid = HorizonGrid::uniform(n, 1.0).unwrap();
        let mut values = prob.initial_guess(n, &prm.start()).unwrap();
        for (k, v) in values.iter_mut().enumerate() {
            *v += 0.01 * ((k as f64) * 1.7).sin();
        }
        let generic = assemble_residual(&prob, &grid, &prm.start(), &values).unwrap();
        let direct = residual_rows_on(&values, &prm.start(), &grid, &prm).unwrap();
        for (a, b) in generic.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn leaving_the_chart_is_an_error() {
        let prm = params();
        let n = 4;
        let prob = HemisphereProblem::new(prm);
        let mut values = prob.initial_guess(n, &prm.start()).unwrap();
        values[3 * n + 2] = 50.0;
        let grid = HorizonGrid::uniform(n, 1.0).unwrap();
        assert!(matches!(
            assemble_residual(&prob, &grid, &prm.start(), &values),
            Err(Error::ChartDomainViolation { .. })
        ));
        assert!(matches!(
            residual_rows(&values, &prm.start(), n, &prm),
            Err(Error::ChartDomainViolation { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        let mut p = params();
        p.r_u = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.x0 = 1.0;
        assert!(p.validate().is_err());
    }
}
