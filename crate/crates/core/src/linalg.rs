//! Dense linear algebra for the small systems (n ≤ 10) handled here.
//!
//! Storage is `nalgebra`'s dynamically sized matrices; the factorizations are
//! written out so that singularity and definiteness decisions follow fixed,
//! documented thresholds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-12;
/// Relative asymmetry accepted by [`cholesky_pd`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Max-row-sum norm, `‖M‖∞`.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm_inf(v: &Vector) -> f64 {
    v.amax()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Matrix with all-finite entries and at least one row and column.
pub fn is_valid(m: &Matrix) -> bool {
    m.nrows() >= 1 && m.ncols() >= 1 && m.iter().all(|v| v.is_finite())
}

fn require_square(m: &Matrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Partial-pivot LU factorization `P·A = L·U`, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    /// Factor `a`, declaring it singular when a pivot falls below
    /// `rel_tol · scale`.
    pub fn factor_with(a: &Matrix, rel_tol: f64, scale: f64) -> Result<Self> {
        let n = require_square(a, "LU input")?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let threshold = rel_tol * scale;
        if !(scale > 0.0) {
            return Err(Error::SingularMatrix);
        }
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if !(pivot >= threshold) || pivot == 0.0 {
                return Err(Error::SingularMatrix);
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= l * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    /// Factor with the default threshold: `PIVOT_TOL` times the largest
    /// entry magnitude of `a`.
    pub fn factor(a: &Matrix) -> Result<Self> {
        Self::factor_with(a, PIVOT_TOL, a.amax())
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.dim();
        let mut x = Vector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.nrows(), b.ncols());
        for (j, col) in b.column_iter().enumerate() {
            out.set_column(j, &self.solve(&col.into_owned()));
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve_matrix(&Matrix::identity(self.dim(), self.dim()))
    }

    pub fn determinant(&self) -> f64 {
        self.lu.diagonal().iter().product::<f64>() * self.sign
    }
}

/// Solve `A·x = b` by partial-pivot LU.
pub fn solve_linear(a: &Matrix, b: &Vector) -> Result<Vector> {
    let n = require_square(a, "A")?;
    if b.len() != n {
        return Err(Error::Dimension(format!("b has length {}, expected {n}", b.len())));
    }
    Ok(Lu::factor(a)?.solve(b))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Lu::factor(a)?.inverse())
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub l: Matrix,
}

/// Certify `m` as symmetric positive definite and return its Cholesky factor.
///
/// The input is symmetrized before factoring once the asymmetry check has
/// passed.
pub fn cholesky_pd(m: &Matrix) -> Result<Cholesky> {
    let n = require_square(m, "M")?;
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym / scale));
    }
    let s = symmetrize(m);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Ok(Cholesky { l })
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    cholesky_pd(m).is_ok()
}

/// Solve `Aᵀ·X + X·A = −W` through the vectorized n²×n² system.
///
/// With column-major `vec`, the operator is `(I ⊗ Aᵀ) + (Aᵀ ⊗ I)`.
pub fn solve_lyapunov(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = require_square(a, "A")?;
    if w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "W is {}x{}, expected {n}x{n}",
            w.nrows(),
            w.ncols()
        )));
    }
    let nn = n * n;
    let mut op = Matrix::zeros(nn, nn);
    // Row index (i + n·j) corresponds to entry X[i, j].
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for k in 0..n {
                // (AᵀX)[i,j] = Σ_k A[k,i] X[k,j]
                op[(row, k + n * j)] += a[(k, i)];
                // (XA)[i,j] = Σ_k X[i,k] A[k,j]
                op[(row, i + n * k)] += a[(k, j)];
            }
        }
    }
    let rhs = Vector::from_iterator(nn, w.iter().map(|v| -v));
    let x = solve_linear(&op, &rhs)?;
    let x = Matrix::from_column_slice(n, n, x.as_slice());
    Ok(symmetrize(&x))
}

/// Residual `Aᵀ·X + X·A + W`.
pub fn lyapunov_residual(a: &Matrix, x: &Matrix, w: &Matrix) -> Matrix {
    a.transpose() * x + x * a + w
}

/// Hurwitz test: `A` is Hurwitz iff `AᵀX + XA = −I` has a positive
/// definite solution.
pub fn is_hurwitz(a: &Matrix) -> bool {
    if a.nrows() != a.ncols() || !is_valid(a) {
        return false;
    }
    let n = a.nrows();
    match solve_lyapunov(a, &Matrix::identity(n, n)) {
        Ok(x) => is_positive_definite(&x),
        Err(_) => false,
    }
}
