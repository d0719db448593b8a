//! A nonlinear problem on the flat manifold R² and an independent evaluation
//! of its discrete Lagrangian `J(U) = φ + νᵀψ + Σ (L + μᵀC)·Δτ_i`.

use geonmpc::horizon::{DecisionLayout, Dims, HorizonGrid, OcpDefinition};
use geonmpc::linalg::Matrix;

/// A nonlinear problem on the flat manifold R².
pub struct Flat;

impl OcpDefinition for Flat {
    fn dims(&self) -> Dims {
        Dims {
            n_x: 2,
            n_u: 2,
            n_mu: 1,
            n_nu: 1,
            n_p: 1,
        }
    }
    fn dynamics(&self, _: f64, x: &[f64], u: &[f64], p: &[f64]) -> Vec<f64> {
        vec![
            p[0] * (u[0] + 0.3 * x[1].sin()),
            p[0] * (u[1] * x[0] - 0.2 * x[1] * x[1]),
        ]
    }
    fn dynamics_jacobian(&self, _: f64, x: &[f64], u: &[f64], p: &[f64]) -> Matrix {
        Matrix::from_rows(&[
            &[0.0, p[0] * 0.3 * x[1].cos()],
            &[p[0] * u[1], -p[0] * 0.4 * x[1]],
        ])
        .unwrap()
    }
    fn running_cost(&self, _: f64, x: &[f64], u: &[f64], p: &[f64]) -> f64 {
        p[0] * (0.5 * (u[0] * u[0] + u[1] * u[1]) + 0.1 * x[0] * x[0])
    }
    fn terminal_cost(&self, x: &[f64], p: &[f64]) -> f64 {
        p[0] + 0.5 * x[0] * x[0] + x[0] * x[1] * p[0]
    }
    fn constraint(&self, _: f64, x: &[f64], u: &[f64], _: &[f64]) -> Vec<f64> {
        vec![u[0] * u[1] + x[0] - 0.3]
    }
    fn terminal_constraint(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        vec![x[0] + x[1] * x[1] - p[0]]
    }
    fn hamiltonian_x(
        &self,
        _: f64,
        x: &[f64],
        l: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64> {
        vec![
            0.2 * p[0] * x[0] + l[1] * p[0] * u[1] + mu[0],
            l[0] * p[0] * 0.3 * x[1].cos() - l[1] * p[0] * 0.4 * x[1],
        ]
    }
    fn hamiltonian_u(
        &self,
        _: f64,
        x: &[f64],
        l: &[f64],
        u: &[f64],
        mu: &[f64],
        p: &[f64],
    ) -> Vec<f64> {
        vec![
            p[0] * u[0] + l[0] * p[0] + mu[0] * u[1],
            p[0] * u[1] + l[1] * p[0] * x[0] + mu[0] * u[0],
        ]
    }
    fn hamiltonian_p(
        &self,
        _: f64,
        x: &[f64],
        l: &[f64],
        u: &[f64],
        _: &[f64],
        _: &[f64],
    ) -> Vec<f64> {
        vec![
            0.5 * (u[0] * u[0] + u[1] * u[1])
                + 0.1 * x[0] * x[0]
                + l[0] * (u[0] + 0.3 * x[1].sin())
                + l[1] * (u[1] * x[0] - 0.2 * x[1] * x[1]),
        ]
    }
    fn terminal_cost_x(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        vec![x[0] + x[1] * p[0], x[0] * p[0]]
    }
    fn terminal_cost_p(&self, x: &[f64], _: &[f64]) -> Vec<f64> {
        vec![1.0 + x[0] * x[1]]
    }
    fn terminal_constraint_x(&self, x: &[f64], _: &[f64]) -> Matrix {
        Matrix::from_rows(&[&[1.0, 2.0 * x[1]]]).unwrap()
    }
    fn terminal_constraint_p(&self, _: &[f64], _: &[f64]) -> Matrix {
        Matrix::from_rows(&[&[-1.0]]).unwrap()
    }
}

/// Independent evaluation of the discrete Lagrangian.
pub fn lagrangian(grid: &HorizonGrid, x0: &[f64], values: &[f64]) -> f64 {
    let def = Flat;
    let layout = DecisionLayout::new(grid.len(), def.dims());
    let p = layout.params(values).to_vec();
    let mut x = x0.to_vec();
    let mut total = 0.0;
    for i in 0..grid.len() {
        let (tau, dt) = (grid.point(i), grid.step(i));
        let u = layout.control(values, i);
        let mu = layout.multiplier(values, i);
        total +=
            (def.running_cost(tau, &x, &u, &p) + mu[0] * def.constraint(tau, &x, &u, &p)[0]) * dt;
        let f = def.dynamics(tau, &x, &u, &p);
        x = vec![x[0] + f[0] * dt, x[1] + f[1] * dt];
    }
    let nu = layout.nu(values);
    total + def.terminal_cost(&x, &p) + nu[0] * def.terminal_constraint(&x, &p)[0]
}

pub fn central_gradient(grid: &HorizonGrid, x0: &[f64], values: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..values.len())
        .map(|j| {
            let mut plus = values.to_vec();
            let mut minus = values.to_vec();
            plus[j] += h;
            minus[j] -= h;
            (lagrangian(grid, x0, &plus) - lagrangian(grid, x0, &minus)) / (2.0 * h)
        })
        .collect()
}
