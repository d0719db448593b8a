//! Unrestarted GMRES with optional left preconditioning.
//!
//! The Krylov basis is built by Arnoldi with modified Gram-Schmidt and the
//! small least-squares problem is kept triangular with Givens rotations, so
//! the (preconditioned) residual norm is available at every iteration for free.

use crate::error::{check_len, Result};
use crate::linalg::{self, LuFactors, Matrix};

/// Arnoldi vectors with norm below this end the iteration (happy breakdown).
pub const BREAKDOWN_TOL: f64 = 1e-14;

/// A square linear map `v ↦ A·v`.
///
/// Finite-difference Jacobian products are only approximately linear; GMRES
/// does not rely on exact linearity, only on `apply` being deterministic.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for Matrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matvec(v)
    }
}

/// LU factors act as the inverse of the factored matrix, which is what a
/// preconditioner needs.
impl LinearOperator for LuFactors {
    fn dim(&self) -> usize {
        LuFactors::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        linalg::lu_solve(self, v)
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let out = (self.f)(v)?;
        check_len("FnOperator::apply", self.dim, out.len())?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    /// Krylov dimension cap (no restarts).
    pub max_iters: usize,
    /// Absolute threshold on the preconditioned residual norm.
    pub abs_tol: f64,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            max_iters: 20,
            abs_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresReport {
    pub solution: Vec<f64>,
    pub iters_used: usize,
    /// Preconditioned residual norm of `solution`.
    pub final_residual_norm: f64,
    pub converged: bool,
    /// An Arnoldi vector vanished (the Krylov space became invariant).
    pub breakdown: bool,
    /// Residual norm before the first iteration and after each iteration.
    pub residual_history: Vec<f64>,
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Solves `A·x = b` starting from `x0`; with a preconditioner `M⁻¹` the
/// minimized quantity is `‖M⁻¹(b − A·x)‖₂`.
pub fn gmres_solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    x0: &[f64],
    precond: Option<&dyn LinearOperator>,
    cfg: &GmresConfig,
) -> Result<GmresReport> {
    let n = op.dim();
    check_len("gmres rhs", n, rhs.len())?;
    check_len("gmres x0", n, x0.len())?;
    if let Some(m) = precond {
        check_len("gmres preconditioner", n, m.dim())?;
    }
    if cfg.max_iters == 0 || !(cfg.abs_tol > 0.0) {
        return Err(crate::Error::InvalidArgument(format!(
            "GMRES needs max_iters >= 1 and abs_tol > 0, got {cfg:?}"
        )));
    }
    let apply_m = |v: Vec<f64>| -> Result<Vec<f64>> {
        match precond {
            Some(m) => m.apply(&v),
            None => Ok(v),
        }
    };

    // A zero start needs no operator application (and finite-difference
    // operators are not defined at v = 0).
    let r0 = if x0.iter().all(|v| *v == 0.0) {
        apply_m(rhs.to_vec())?
    } else {
        apply_m(linalg::sub(rhs, &op.apply(x0)?)?)?
    };
    let beta = linalg::norm2(&r0);
    let mut history = vec![beta];
    if beta <= cfg.abs_tol || beta == 0.0 {
        return Ok(GmresReport {
            solution: x0.to_vec(),
            iters_used: 0,
            final_residual_norm: beta,
            converged: beta <= cfg.abs_tol,
            breakdown: false,
            residual_history: history,
        });
    }

    let m = cfg.max_iters.min(n.max(1));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(r0.iter().map(|v| v / beta).collect());
    // Columns of the rotated Hessenberg matrix (upper triangular part).
    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rotations: Vec<(f64, f64)> = Vec::with_capacity(m);
    let mut g = vec![0.0; m + 1];
    g[0] = beta;
    let mut breakdown = false;
    let mut k = 0;

    for j in 0..m {
        let mut w = apply_m(op.apply(&basis[j])?)?;
        let mut h = vec![0.0; j + 2];
        for (i, v) in basis.iter().enumerate().take(j + 1) {
            let hij = linalg::dot(&w, v)?;
            h[i] = hij;
            linalg::axpy(-hij, v, &mut w)?;
        }
        let h_next = linalg::norm2(&w);
        h[j + 1] = h_next;

        for (i, &(c, s)) in rotations.iter().enumerate() {
            let (a, b) = (h[i], h[i + 1]);
            h[i] = c * a + s * b;
            h[i + 1] = -s * a + c * b;
        }
        let (c, s) = givens(h[j], h[j + 1]);
        h[j] = c * h[j] + s * h[j + 1];
        h[j + 1] = 0.0;
        rotations.push((c, s));
        g[j + 1] = -s * g[j];
        g[j] *= c;
        h.truncate(j + 1);
        r_cols.push(h);

        k = j + 1;
        let res = g[j + 1].abs();
        history.push(res);
        if h_next < BREAKDOWN_TOL {
            breakdown = true;
            break;
        }
        if res <= cfg.abs_tol {
            break;
        }
        basis.push(w.iter().map(|v| v / h_next).collect());
    }

    // Back substitution on the k×k triangular system.
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for (jj, yj) in y.iter().enumerate().skip(i + 1) {
            s -= r_cols[jj][i] * yj;
        }
        y[i] = s / r_cols[i][i];
    }
    let mut x = x0.to_vec();
    for (yi, v) in y.iter().zip(&basis) {
        linalg::axpy(*yi, v, &mut x)?;
    }
    if !linalg::all_finite(&x) {
        return Err(crate::Error::NonFinite("gmres solution"));
    }
    let final_residual_norm = g[k].abs();
    Ok(GmresReport {
        solution: x,
        iters_used: k,
        final_residual_norm,
        converged: final_residual_norm <= cfg.abs_tol,
        breakdown,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{lu_factor, lu_solve, norm2, sub};
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            a[(i, i)] += 2.0 * (n as f64).sqrt();
        }
        a
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let cfg = GmresConfig::default();
        let r = gmres_solve(&Matrix::identity(3), &b, &[0.0; 3], None, &cfg).unwrap();
        assert_eq!(r.iters_used, 1);
        assert!(r.converged);
        assert!(norm2(&sub(&r.solution, &b).unwrap()) < 1e-14);
    }

    #[test]
    fn five_distinct_eigenvalues() {
        let a = Matrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = vec![1.0; 5];
        let cfg = GmresConfig {
            max_iters: 20,
            abs_tol: 1e-12,
        };
        let r = gmres_solve(&a, &b, &[0.0; 5], None, &cfg).unwrap();
        assert!(r.iters_used <= 5);
        let direct = lu_solve(&lu_factor(&a).unwrap(), &b).unwrap();
        let resid = sub(&a.matvec(&r.solution).unwrap(), &b).unwrap();
        assert!(norm2(&resid) <= 1e-12);
        assert!(norm2(&sub(&r.solution, &direct).unwrap()) <= 1e-12);
    }

    #[test]
    fn exact_preconditioner_gives_one_iteration() {
        let a = random_matrix(30, 5);
        let lu = lu_factor(&a).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (0.3 * i as f64).cos()).collect();
        let cfg = GmresConfig {
            max_iters: 20,
            abs_tol: 1e-10,
        };
        let r = gmres_solve(&a, &b, &[0.0; 30], Some(&lu), &cfg).unwrap();
        assert_eq!(r.iters_used, 1);
        assert!(r.converged);
        let resid = sub(&a.matvec(&r.solution).unwrap(), &b).unwrap();
        assert!(norm2(&resid) <= 1e-10);
    }

    #[test]
    fn zero_rhs_returns_initial_guess() {
        let r = gmres_solve(
            &Matrix::identity(4),
            &[0.0; 4],
            &[0.0; 4],
            None,
            &GmresConfig::default(),
        )
        .unwrap();
        assert_eq!(r.iters_used, 0);
        assert!(r.converged);
        assert_eq!(r.solution, vec![0.0; 4]);
    }

    #[test]
    fn iteration_cap_is_respected() {
        let a = random_matrix(40, 9);
        let b = vec![1.0; 40];
        let cfg = GmresConfig {
            max_iters: 3,
            abs_tol: 1e-14,
        };
        let r = gmres_solve(&a, &b, &[0.0; 40], None, &cfg).unwrap();
        assert_eq!(r.iters_used, 3);
        assert!(!r.converged);
        assert_eq!(r.residual_history.len(), 4);
        // The reported residual is the true one for an unpreconditioned solve.
        let true_res = norm2(&sub(&b, &a.matvec(&r.solution).unwrap()).unwrap());
        assert!((true_res - r.final_residual_norm).abs() <= 1e-10 * true_res.max(1.0));
    }

    #[test]
    fn closure_operator_and_dimension_checks() {
        let op = FnOperator::new(2, |v: &[f64]| Ok(vec![2.0 * v[0], 3.0 * v[1]]));
        let r = gmres_solve(&op, &[2.0, 3.0], &[0.0, 0.0], None, &GmresConfig::default()).unwrap();
        assert!(norm2(&sub(&r.solution, &[1.0, 1.0]).unwrap()) < 1e-12);
        assert!(gmres_solve(&op, &[1.0], &[0.0, 0.0], None, &GmresConfig::default()).is_err());
        let bad = GmresConfig {
            max_iters: 0,
            abs_tol: 1e-5,
        };
        assert!(gmres_solve(&op, &[1.0, 1.0], &[0.0, 0.0], None, &bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn matches_direct_solve(n in 1usize..=40, seed in any::<u64>()) {
                let a = random_matrix(n, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
                let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cfg = GmresConfig { max_iters: n, abs_tol: 1e-12 };
                let r = gmres_solve(&a, &b, &vec![0.0; n], None, &cfg).unwrap();
                let direct = lu_solve(&lu_factor(&a).unwrap(), &b).unwrap();
                let err = norm2(&sub(&r.solution, &direct).unwrap());
                prop_assert!(err <= 1e-8 * norm2(&direct));
                for w in r.residual_history.windows(2) {
                    prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
                }
            }

            #[test]
            fn exact_inverse_preconditioner_needs_one_iteration(n in 1usize..=30, seed in any::<u64>()) {
                let a = random_matrix(n, seed);
                let lu = lu_factor(&a).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let cfg = GmresConfig { max_iters: 20, abs_tol: 1e-8 };
                let r = gmres_solve(&a, &b, &vec![0.0; n], Some(&lu), &cfg).unwrap();
                prop_assert_eq!(r.iters_used, 1);
                prop_assert!(r.converged);
            }
        }
    }
}
