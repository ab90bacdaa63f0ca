//! Dense linear algebra and normal-distribution helpers shared by every
//! other module.
//!
//! Dense matrices are plain `ndarray::Array2<f64>` in row-major layout.
//! [`RealMatrix`] adds the sparse-coordinate form used for file I/O and
//! sparsity accounting; it is densified before any model computation.

use std::collections::HashSet;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Sparse-coordinate matrix. Absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Domain(format!(
                    "coordinate ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !seen.insert((r, c)) {
                return Err(Error::Domain(format!("duplicate coordinate ({r}, {c})")));
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let entries = m
            .indexed_iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|((r, c), v)| (r, c, *v))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros((self.rows, self.cols));
        for &(r, c, v) in &self.entries {
            m[[r, c]] = v;
        }
        m
    }
}

/// A matrix in either storage form; both describe the same logical values.
#[derive(Debug, Clone, PartialEq)]
pub enum RealMatrix {
    Dense(Matrix),
    Sparse(SparseMatrix),
}

impl RealMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            RealMatrix::Dense(m) => m.dim(),
            RealMatrix::Sparse(s) => s.shape(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            RealMatrix::Dense(m) => m.clone(),
            RealMatrix::Sparse(s) => s.to_dense(),
        }
    }

    pub fn into_dense(self) -> Matrix {
        match self {
            RealMatrix::Dense(m) => m,
            RealMatrix::Sparse(s) => s.to_dense(),
        }
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        match self {
            RealMatrix::Dense(m) => SparseMatrix::from_dense(m),
            RealMatrix::Sparse(s) => s.clone(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            RealMatrix::Dense(m) => m.iter().filter(|v| **v != 0.0).count(),
            RealMatrix::Sparse(s) => s.entries.iter().filter(|e| e.2 != 0.0).count(),
        }
    }

    /// Fraction of entries equal to zero. Empty matrices count as fully sparse.
    pub fn zero_fraction(&self) -> f64 {
        let (r, c) = self.shape();
        if r * c == 0 {
            return 1.0;
        }
        1.0 - self.nnz() as f64 / (r * c) as f64
    }
}

impl From<Matrix> for RealMatrix {
    fn from(m: Matrix) -> Self {
        RealMatrix::Dense(m)
    }
}

impl From<SparseMatrix> for RealMatrix {
    fn from(s: SparseMatrix) -> Self {
        RealMatrix::Sparse(s)
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::Shape {
            op: "matmul",
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.dot(b))
}

pub(crate) fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

/// Minimum-norm least-squares solution of `a · x ≈ b`, via SVD with the
/// usual `max(m, n) · σ_max · ε` rank cutoff.
pub fn least_squares_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape {
            op: "least_squares_solve",
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.ncols() == 0 || a.nrows() == 0 {
        return Ok(Matrix::zeros((a.ncols(), b.ncols())));
    }
    let svd = to_nalgebra(a).svd(true, true);
    let smax = svd.singular_values.max();
    let eps = a.nrows().max(a.ncols()) as f64 * smax * f64::EPSILON;
    let x = svd
        .solve(&to_nalgebra(b), eps)
        .map_err(|e| Error::Domain(e.to_string()))?;
    Ok(from_nalgebra(&x))
}

/// Lower Cholesky factor of a symmetric matrix; reads the lower triangle.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Shape {
            op: "cholesky",
            left: s.dim(),
            right: s.dim(),
        });
    }
    let mut l = Matrix::zeros((n, n));
    for j in 0..n {
        let mut d = s[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut v = s[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    Ok(l)
}

/// Solve `l · x = b` in place for lower-triangular `l`.
pub(crate) fn forward_substitute(l: &Matrix, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[[i, k]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Solve `lᵀ · x = b` in place for lower-triangular `l`.
pub(crate) fn backward_substitute(l: &Matrix, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[[k, i]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
}

/// `(φ(x), Φ(x))` for the standard normal distribution.
pub fn std_normal(x: f64) -> (f64, f64) {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let cdf = 0.5 * libm::erfc(-x / SQRT_2);
    (pdf, cdf)
}

/// Root mean square of all entries; 0 for an empty matrix.
pub fn rms(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64).sqrt()
}
