//! Symmetric-matrix calculus: `vec`, `vech`, the duplication matrix and its
//! left inverse, and square Kronecker products.
//!
//! All indices are 0-based. Documentation quoting positions uses the 1-based
//! convention `(i, j) -> p(j-1) + i` for `vec` and lower-triangle column
//! stacking for `vech`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative symmetry tolerance applied by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Number of distinct entries of a symmetric `p x p` matrix, `p(p+1)/2`.
pub fn half_dim(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Position of entry `(i, j)`, `i >= j`, inside `vech` of a `p x p` matrix.
#[inline]
pub fn vech_index(i: usize, j: usize, p: usize) -> usize {
    debug_assert!(i >= j && i < p);
    j * (2 * p - j + 1) / 2 + (i - j)
}

/// Inverse of [`vech_index`]: the `(row, col)` pair (row >= col) stored at
/// position `pos`.
pub fn vech_pair(pos: usize, p: usize) -> (usize, usize) {
    let mut offset = 0;
    for j in 0..p {
        let len = p - j;
        if pos < offset + len {
            return (j + pos - offset, j);
        }
        offset += len;
    }
    panic!("vech position {pos} out of range for p={p}");
}

/// A real symmetric matrix. Symmetry is exact: construction averages the
/// two triangles after checking they agree within [`SYMMETRY_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax();
        let mut deviation = 0.0f64;
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                deviation = deviation.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if !(deviation <= SYMMETRY_TOL * (1.0 + scale)) {
            return Err(Error::NotSymmetric { deviation });
        }
        let mut m = m;
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds the matrix from its lower triangle, ignoring the upper one.
    pub fn from_lower(m: &DMatrix<f64>) -> Self {
        let p = m.nrows();
        SymMatrix(DMatrix::from_fn(p, p, |i, j| {
            if i >= j {
                m[(i, j)]
            } else {
                m[(j, i)]
            }
        }))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.clone().cholesky().is_some()
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

/// Column-stacking vectorization. Entry `(i, j)` lands at `p*j + i`.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for a square matrix.
pub fn unvec(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = (v.len() as f64).sqrt().round() as usize;
    if p * p != v.len() {
        return Err(Error::Dimension(format!(
            "vec length {} is not a square",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(p, p, v.as_slice()))
}

/// Half-vectorization: the lower triangle stacked column by column.
pub fn vech(a: &SymMatrix) -> DVector<f64> {
    let p = a.dim();
    let mut out = DVector::zeros(half_dim(p));
    let mut pos = 0;
    for j in 0..p {
        for i in j..p {
            out[pos] = a[(i, j)];
            pos += 1;
        }
    }
    out
}

/// `vech` of a general square matrix. Fails unless the input is symmetric
/// within [`SYMMETRY_TOL`].
pub fn vech_checked(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(vech(&SymMatrix::new(a.clone())?))
}

/// Rebuilds the symmetric matrix whose `vech` is `v`.
pub fn unvech(v: &DVector<f64>) -> Result<SymMatrix> {
    let p = dim_from_half(v.len())?;
    let mut m = DMatrix::zeros(p, p);
    let mut pos = 0;
    for j in 0..p {
        for i in j..p {
            m[(i, j)] = v[pos];
            m[(j, i)] = v[pos];
            pos += 1;
        }
    }
    Ok(SymMatrix(m))
}

/// Solves `p(p+1)/2 = len` for `p`.
pub fn dim_from_half(len: usize) -> Result<usize> {
    let p = (((8 * len + 1) as f64).sqrt() - 1.0) / 2.0;
    let p = p.round() as usize;
    if half_dim(p) != len {
        return Err(Error::Dimension(format!(
            "{len} is not a triangular number"
        )));
    }
    Ok(p)
}

/// The `p^2 x p(p+1)/2` duplication matrix `D_p`, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicationMatrix {
    p: usize,
    matrix: DMatrix<f64>,
}

impl DuplicationMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Builds `D_p`, the unique 0/1 matrix with `D_p vech(A) = vec(A)` for all
/// symmetric `A`.
pub fn duplication(p: usize) -> DuplicationMatrix {
    assert!(p >= 1, "duplication matrix needs p >= 1");
    let mut matrix = DMatrix::zeros(p * p, half_dim(p));
    for j in 0..p {
        for i in 0..p {
            let col = if i >= j {
                vech_index(i, j, p)
            } else {
                vech_index(j, i, p)
            };
            matrix[(j * p + i, col)] = 1.0;
        }
    }
    DuplicationMatrix { p, matrix }
}

/// Moore-Penrose left inverse `D_p^+ = (D_p^T D_p)^{-1} D_p^T`.
///
/// `D_p^T D_p` is diagonal (1 for diagonal positions, 2 otherwise), so the
/// inverse is taken entrywise.
pub fn duplication_pinv(d: &DuplicationMatrix) -> DMatrix<f64> {
    let dt = d.matrix.transpose();
    let gram = &dt * &d.matrix;
    let mut out = dt;
    for r in 0..out.nrows() {
        let inv = 1.0 / gram[(r, r)];
        out.row_mut(r).scale_mut(inv);
    }
    out
}

/// Kronecker product of two square matrices of equal dimension.
///
/// Entry `(p*i + j, p*k + l)` equals `a[(i,k)] * b[(j,l)]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || !b.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "kron expects equal square inputs, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let p = a.nrows();
    let mut out = DMatrix::zeros(p * p, p * p);
    for i in 0..p {
        for k in 0..p {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..p {
                for l in 0..p {
                    out[(p * i + j, p * k + l)] = aik * b[(j, l)];
                }
            }
        }
    }
    Ok(out)
}
