//! Small dense linear algebra kernel.
//!
//! Vectors are plain `[f64]` slices / `Vec<f64>`; [`Matrix`] is row-major.
//! Everything here is sized for systems of a few hundred unknowns at most,
//! which is the scale of the Newton systems assembled by the solver.

use crate::error::{check_len, Error, Result};

/// Pivot magnitudes below this are treated as exactly singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-14;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix column by column.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = Matrix::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            check_len("Matrix::from_columns", rows, col.len())?;
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Largest absolute entry; zero for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.cols, v.len())?;
        Ok((0..self.rows)
            .map(|i| dot_unchecked(self.row(i), v))
            .collect())
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("tr_matvec", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    // Scaled accumulation so that huge or tiny entries neither overflow nor underflow.
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len("axpy", y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

/// Element-wise `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("sub", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Packed LU factors of a square matrix with partial (row) pivoting: `P·A = L·U`.
///
/// `L` is unit lower triangular and stored below the diagonal; `U` occupies the
/// diagonal and above. `pivots[k]` is the original row that ended up in row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuFactors {
    lu: Matrix,
    pivots: Vec<usize>,
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn packed(&self) -> &Matrix {
        &self.lu
    }

    /// Unit lower triangular factor.
    pub fn lower(&self) -> Matrix {
        let n = self.dim();
        let mut l = Matrix::identity(n);
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = self.lu[(i, j)];
            }
        }
        l
    }

    /// Upper triangular factor.
    pub fn upper(&self) -> Matrix {
        let n = self.dim();
        let mut u = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                u[(i, j)] = self.lu[(i, j)];
            }
        }
        u
    }

    /// Applies the row permutation: returns `P·a`.
    pub fn permute_rows(&self, a: &Matrix) -> Result<Matrix> {
        check_len("permute_rows", self.dim(), a.rows())?;
        let mut out = Matrix::zeros(a.rows(), a.cols());
        for (k, &src) in self.pivots.iter().enumerate() {
            for j in 0..a.cols() {
                out[(k, j)] = a[(src, j)];
            }
        }
        Ok(out)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        lu_solve(self, b)
    }
}

/// LU factorization with partial pivoting.
pub fn lu_factor(a: &Matrix) -> Result<LuFactors> {
    if !a.is_square() {
        return Err(Error::dims("lu_factor (square)", a.rows(), a.cols()));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "lu_factor of an empty matrix".into(),
        ));
    }
    let mut lu = a.clone();
    let mut pivots: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if !(pmax >= SINGULAR_PIVOT_TOL) {
            return Err(Error::SingularMatrix {
                column: k,
                pivot: pmax,
            });
        }
        if p != k {
            pivots.swap(p, k);
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            if factor == 0.0 {
                continue;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                lu[(i, j)] -= factor * ukj;
            }
        }
    }
    Ok(LuFactors { lu, pivots })
}

/// Solves `A·x = b` given the factors of `A`.
pub fn lu_solve(f: &LuFactors, b: &[f64]) -> Result<Vec<f64>> {
    let n = f.dim();
    check_len("lu_solve", n, b.len())?;
    let lu = &f.lu;
    let mut x: Vec<f64> = f.pivots.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        let s = dot_unchecked(&lu.row(i)[..i], &x[..i]);
        x[i] -= s;
    }
    for i in (0..n).rev() {
        let s = dot_unchecked(&lu.row(i)[i + 1..], &x[i + 1..]);
        x[i] = (x[i] - s) / lu[(i, i)];
    }
    if !all_finite(&x) {
        return Err(Error::NonFinite("lu_solve"));
    }
    Ok(x)
}
