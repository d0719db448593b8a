//! One-step integrators that keep trajectories on a manifold.
//!
//! Three strategies are provided:
//!
//! * [`local_coordinates_step`]: integrate the reduced ODE `ż = β(z)` in a
//!   chart and lift the result with the parametrization `x = α(z)`. The
//!   output lies on the manifold by construction.
//! * [`standard_projection_step`]: take an ambient step, then project
//!   orthogonally back onto `{y | g(y) = 0}`.
//! * [`symmetric_projection_step`]: perturb by `G(y_n)ᵀμ`, take a symmetric
//!   ambient step, and project with `G(y_{n+1})ᵀμ` using the same `μ`. With a
//!   symmetric base method the combined map is time-reversible.

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};

/// Target accuracy for chart lifts.
pub const CHART_TOL: f64 = 1e-12;
/// A point is on the manifold when `‖g(y)‖∞` is at most this.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;
/// Inner iterations of the orthogonal projection.
pub const PROJECTION_MAX_ITERS: usize = 20;
/// Outer iterations on `μ` for the symmetric projection.
pub const SYMMETRIC_MAX_ITERS: usize = 30;

const IMPLICIT_MAX_ITERS: usize = 200;
const MU_FD_STEP: f64 = 1e-7;

/// A one-step method `y_{n+1} = y_n + Φ(t_n, y_n)·h` for `ẏ = f(t, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneStepMethod {
    ExplicitEuler,
    /// Implicit trapezoidal rule, solved by fixed-point iteration.
    Trapezoidal,
}

impl OneStepMethod {
    /// Symmetric methods reproduce `y_n` when stepped back from `y_{n+1}` with `-h`.
    pub fn is_symmetric(self) -> bool {
        matches!(self, OneStepMethod::Trapezoidal)
    }

    pub fn step<F>(self, field: &F, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>>
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + ?Sized,
    {
        let f0 = field(t, y);
        check_len("vector field output", y.len(), f0.len())?;
        match self {
            OneStepMethod::ExplicitEuler => {
                Ok(y.iter().zip(&f0).map(|(yi, fi)| yi + h * fi).collect())
            }
            OneStepMethod::Trapezoidal => {
                let mut next: Vec<f64> = y.iter().zip(&f0).map(|(yi, fi)| yi + h * fi).collect();
                let scale = 1.0 + linalg::norm_inf(y);
                let mut update = f64::INFINITY;
                for _ in 0..IMPLICIT_MAX_ITERS {
                    let f1 = field(t + h, &next);
                    let candidate: Vec<f64> = y
                        .iter()
                        .zip(f0.iter().zip(&f1))
                        .map(|(yi, (a, b))| yi + 0.5 * h * (a + b))
                        .collect();
                    update = candidate
                        .iter()
                        .zip(&next)
                        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    next = candidate;
                    if update <= 1e-16 * scale {
                        return Ok(next);
                    }
                }
                if update <= 1e-13 * scale {
                    Ok(next)
                } else {
                    Err(Error::ImplicitStepDivergence {
                        iterations: IMPLICIT_MAX_ITERS,
                        update,
                    })
                }
            }
        }
    }
}

/// A manifold given implicitly as the zero set of `g: ℝⁿ → ℝᵐ`.
pub trait ManifoldConstraint {
    fn ambient_dim(&self) -> usize;
    fn constraint_dim(&self) -> usize;
    fn residual(&self, y: &[f64]) -> Vec<f64>;
    /// `G(y) = g'(y)`, an `m × n` matrix.
    fn jacobian(&self, y: &[f64]) -> Matrix;

    fn is_on_manifold(&self, y: &[f64]) -> bool {
        linalg::norm_inf(&self.residual(y)) <= ON_MANIFOLD_TOL
    }
}

/// A local parametrization `α` of a manifold and its inverse.
pub trait ManifoldChart {
    fn chart_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    /// `x = α(z)`.
    fn lift(&self, z: &[f64]) -> Result<Vec<f64>>;
    /// `z` with `x = α(z)`.
    fn coordinates(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// The unit sphere `‖y‖² = 1` in `ℝⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitSphere {
    pub dim: usize,
}

impl Default for UnitSphere {
    fn default() -> Self {
        UnitSphere { dim: 3 }
    }
}

impl ManifoldConstraint for UnitSphere {
    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn constraint_dim(&self) -> usize {
        1
    }

    fn residual(&self, y: &[f64]) -> Vec<f64> {
        vec![y.iter().map(|v| v * v).sum::<f64>() - 1.0]
    }

    fn jacobian(&self, y: &[f64]) -> Matrix {
        Matrix::from_row_major(1, y.len(), y.iter().map(|v| 2.0 * v).collect()).expect("1×n row")
    }
}

/// Chart of the open upper unit hemisphere: `α(x, y) = (x, y, √(1 − x² − y²))`.
///
/// The domain is truncated at `z ≥ z_min` so the square-root derivative stays bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperHemisphereChart {
    pub z_min: f64,
}

impl Default for UpperHemisphereChart {
    fn default() -> Self {
        UpperHemisphereChart { z_min: 0.05 }
    }
}

impl UpperHemisphereChart {
    pub fn radius_sq_limit(&self) -> f64 {
        1.0 - self.z_min * self.z_min
    }

    pub fn check_domain(&self, x: f64, y: f64) -> Result<()> {
        let radius_sq = x * x + y * y;
        let limit = self.radius_sq_limit();
        if radius_sq <= limit {
            Ok(())
        } else {
            Err(Error::ChartDomainViolation { radius_sq, limit })
        }
    }

    /// Height above the equator for in-domain chart coordinates.
    pub fn height(&self, x: f64, y: f64) -> Result<f64> {
        self.check_domain(x, y)?;
        Ok((1.0 - x * x - y * y).sqrt())
    }
}

impl ManifoldChart for UpperHemisphereChart {
    fn chart_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("hemisphere lift", 2, z.len())?;
        if !linalg::all_finite(z) {
            return Err(Error::NonFinite("hemisphere lift"));
        }
        Ok(vec![z[0], z[1], self.height(z[0], z[1])?])
    }

    fn coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("hemisphere coordinates", 3, x.len())?;
        self.check_domain(x[0], x[1])?;
        if !(x[2] > 0.0) {
            return Err(Error::ChartDomainViolation {
                radius_sq: x[0] * x[0] + x[1] * x[1],
                limit: self.radius_sq_limit(),
            });
        }
        Ok(vec![x[0], x[1]])
    }
}

/// Local-coordinates step: `x_{n+1} = α(z_n + Φ(z_n)·h)` with `x_n = α(z_n)`.
///
/// `reduced_field` is the chart-coordinate vector field `β`.
pub fn local_coordinates_step<C, F>(
    chart: &C,
    method: OneStepMethod,
    reduced_field: &F,
    t: f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>>
where
    C: ManifoldChart + ?Sized,
    F: Fn(f64, &[f64]) -> Vec<f64> + ?Sized,
{
    let z = chart.coordinates(x)?;
    let z_next = method.step(reduced_field, t, &z, h)?;
    chart.lift(&z_next)
}

/// Orthogonal projection of `y_hat` onto the manifold: `y = ŷ + G(ŷ)ᵀλ`
/// with `λ` found by Newton's method on `λ ↦ g(ŷ + G(ŷ)ᵀλ)`.
pub fn project_onto<M>(constraint: &M, y_hat: &[f64]) -> Result<Vec<f64>>
where
    M: ManifoldConstraint + ?Sized,
{
    check_len("projection input", constraint.ambient_dim(), y_hat.len())?;
    let g_hat = constraint.jacobian(y_hat);
    let g_hat_t = g_hat.transpose();
    let mut lambda = vec![0.0; constraint.constraint_dim()];
    let mut y = y_hat.to_vec();
    let mut r = constraint.residual(&y);
    let mut res = linalg::norm_inf(&r);
    for _ in 0..PROJECTION_MAX_ITERS {
        if res <= ON_MANIFOLD_TOL * 1e-4 {
            return Ok(y);
        }
        let lin = linalg::lu_factor(&constraint.jacobian(&y).matmul(&g_hat_t)?)?;
        let delta = lin.solve(&r)?;
        linalg::axpy(-1.0, &delta, &mut lambda)?;
        y = y_hat.to_vec();
        linalg::axpy(1.0, &g_hat.tr_matvec(&lambda)?, &mut y)?;
        r = constraint.residual(&y);
        let next = linalg::norm_inf(&r);
        if next >= res && next <= ON_MANIFOLD_TOL {
            // Stagnated at rounding level.
            return Ok(y);
        }
        res = next;
    }
    if res <= ON_MANIFOLD_TOL {
        Ok(y)
    } else {
        Err(Error::ProjectionDivergence {
            iterations: PROJECTION_MAX_ITERS,
            residual: res,
        })
    }
}

/// Standard projection step: ambient step with `method`, then orthogonal projection.
pub fn standard_projection_step<M, F>(
    constraint: &M,
    method: OneStepMethod,
    field: &F,
    t: f64,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>>
where
    M: ManifoldConstraint + ?Sized,
    F: Fn(f64, &[f64]) -> Vec<f64> + ?Sized,
{
    let y_hat = method.step(field, t, y, h)?;
    project_onto(constraint, &y_hat)
}

/// Solves `y₁ = ŷ + G(y₁)ᵀμ` for `y₁` by fixed-point iteration.
fn implicit_projection<M>(constraint: &M, y_hat: &[f64], mu: &[f64]) -> Result<Vec<f64>>
where
    M: ManifoldConstraint + ?Sized,
{
    let mut y1 = y_hat.to_vec();
    let scale = 1.0 + linalg::norm_inf(y_hat);
    let mut update = f64::INFINITY;
    for _ in 0..IMPLICIT_MAX_ITERS {
        let mut next = y_hat.to_vec();
        linalg::axpy(1.0, &constraint.jacobian(&y1).tr_matvec(mu)?, &mut next)?;
        update = linalg::norm_inf(&linalg::sub(&next, &y1)?);
        y1 = next;
        if update <= 1e-16 * scale {
            return Ok(y1);
        }
    }
    if update <= 1e-13 * scale {
        Ok(y1)
    } else {
        Err(Error::ImplicitStepDivergence {
            iterations: IMPLICIT_MAX_ITERS,
            update,
        })
    }
}

/// Symmetric projection step.
///
/// Finds `μ` such that `ỹ = y_n + G(y_n)ᵀμ`, `ŷ = Φ_h(ỹ)` and
/// `y_{n+1} = ŷ + G(y_{n+1})ᵀμ` satisfy `g(y_{n+1}) = 0`. The outer iteration
/// is Newton on `μ ↦ g(y_{n+1}(μ))` with a finite-difference sensitivity.
///
/// Time-reversibility requires `method.is_symmetric()`; with a non-symmetric
/// base method the map is still a consistent manifold integrator of the base
/// method's order, just not reversible.
pub fn symmetric_projection_step<M, F>(
    constraint: &M,
    method: OneStepMethod,
    field: &F,
    t: f64,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>>
where
    M: ManifoldConstraint + ?Sized,
    F: Fn(f64, &[f64]) -> Vec<f64> + ?Sized,
{
    check_len(
        "symmetric projection state",
        constraint.ambient_dim(),
        y.len(),
    )?;
    let m = constraint.constraint_dim();
    let g_start = constraint.jacobian(y);

    let image = |mu: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut perturbed = y.to_vec();
        linalg::axpy(1.0, &g_start.tr_matvec(mu)?, &mut perturbed)?;
        let y_hat = method.step(field, t, &perturbed, h)?;
        let y_next = implicit_projection(constraint, &y_hat, mu)?;
        let r = constraint.residual(&y_next);
        Ok((y_next, r))
    };

    let mut mu = vec![0.0; m];
    let (mut y_next, mut r) = image(&mu)?;
    let mut res = linalg::norm_inf(&r);
    for _ in 0..SYMMETRIC_MAX_ITERS {
        if res <= ON_MANIFOLD_TOL * 1e-4 {
            return Ok(y_next);
        }
        let mut columns = Vec::with_capacity(m);
        for j in 0..m {
            let mut shifted = mu.clone();
            shifted[j] += MU_FD_STEP;
            let (_, rj) = image(&shifted)?;
            columns.push(
                rj.iter()
                    .zip(&r)
                    .map(|(a, b)| (a - b) / MU_FD_STEP)
                    .collect::<Vec<f64>>(),
            );
        }
        let sens = linalg::lu_factor(&Matrix::from_columns(m, &columns)?)?;
        let delta = sens.solve(&r)?;
        linalg::axpy(-1.0, &delta, &mut mu)?;
        let (cand, cand_r) = image(&mu)?;
        let next = linalg::norm_inf(&cand_r);
        let stalled = next >= res;
        y_next = cand;
        r = cand_r;
        res = next;
        if stalled && res <= ON_MANIFOLD_TOL {
            return Ok(y_next);
        }
    }
    if res <= ON_MANIFOLD_TOL {
        Ok(y_next)
    } else {
        Err(Error::ProjectionDivergence {
            iterations: SYMMETRIC_MAX_ITERS,
            residual: res,
        })
    }
}
