//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra` dynamic matrices over `Complex64`. Storage is
//! column-major, which is also the `vec` stacking order, so `vec` and
//! `unvec` are copies of the underlying buffer.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;
pub type RealVector = DVector<f64>;

/// Relative Hermitian residual accepted by [`herm_eig`].
const HERMITIAN_TOLERANCE: f64 = 1e-8;
/// Eigenvalues below `-PSD_TOLERANCE * ‖A‖` are rejected by [`psd_sqrt`].
const PSD_TOLERANCE: f64 = 1e-8;
const EIG_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (relative residual {residual:.3e})")]
    NonHermitian { residual: f64 },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semidefinite (eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Entrywise comparison `|a - b| <= abs + rel * max(|a|, |b|)`.
pub fn approx_eq(a: &ComplexMatrix, b: &ComplexMatrix, abs: f64, rel: f64) -> bool {
    a.shape() == b.shape()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| (x - y).norm() <= abs + rel * x.norm().max(y.norm()))
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// `‖A − A†‖_F / max(‖A‖_F, tiny)`; zero for an exactly Hermitian matrix.
pub fn hermitian_residual(a: &ComplexMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    let diff = (a - a.adjoint()).norm();
    diff / a.norm().max(f64::MIN_POSITIVE)
}

pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()) * c64(0.5, 0.0)
}

pub fn trace(a: &ComplexMatrix) -> C64 {
    a.diagonal().sum()
}

/// `tr(A·B)` without forming the product.
pub fn trace_of_product(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.view_mut((i * rb, j * cb), (rb, cb));
            block.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Column-major stacking of `a` into a single column.
pub fn vec(a: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]. Fails when `v.len() != rows * cols`.
pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> Result<ComplexMatrix, LinalgError> {
    if v.len() != rows * cols {
        return Err(LinalgError::DimensionMismatch(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: RealVector,
    /// Unitary; column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `V·diag(f(λ))·V†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= c64(f(self.eigenvalues[j]), 0.0);
        }
        &scaled * self.eigenvectors.adjoint()
    }
}

pub fn herm_eig(a: &ComplexMatrix) -> Result<HermitianEig, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let residual = hermitian_residual(a);
    if a.norm() > 0.0 && residual > HERMITIAN_TOLERANCE {
        return Err(LinalgError::NonHermitian { residual });
    }
    let sym = hermitian_part(a);
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, EIG_MAX_SWEEPS)
        .ok_or(LinalgError::NoConvergence)?;

    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = RealVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Cholesky factorization of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct HpdFactor {
    chol: Cholesky<C64, Dyn>,
    log_det: f64,
}

impl HpdFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `A⁻¹·B`.
    pub fn solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &ComplexVector) -> ComplexVector {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> ComplexMatrix {
        self.chol.inverse()
    }

    /// Real log-determinant, `2·Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `b†·A⁻¹·b` via the triangular factor, real by construction.
    pub fn inv_quadratic_form(&self, b: &ComplexVector) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a nonzero diagonal");
        z.norm_squared()
    }
}

pub fn hpd_factor(a: &ComplexMatrix) -> Result<HpdFactor, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "factorization needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let chol = Cholesky::new(a.clone()).ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..l.nrows() {
        // nalgebra takes complex square roots of negative pivots instead of failing
        let pivot = l[(i, i)];
        if !(pivot.re > 0.0) || !pivot.re.is_finite() || pivot.im.abs() > 1e-12 * pivot.re {
            return Err(LinalgError::NotPositiveDefinite);
        }
        log_det += 2.0 * pivot.re.ln();
    }
    Ok(HpdFactor { chol, log_det })
}

/// Hermitian square root of a positive semidefinite matrix. Slightly negative
/// eigenvalues (roundoff) are clamped to zero.
pub fn psd_sqrt(a: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let eig = herm_eig(a)?;
    let scale = a.norm();
    let min = eig.min_eigenvalue();
    if min < -PSD_TOLERANCE * scale {
        return Err(LinalgError::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// The 0/1 matrix `B_s = E_s ⊗ I_L` with `vec(I_{N_R} ⊗ X) = B_s·vec(X)` for
/// every `L × N_T` matrix `X`.
///
/// `E_s` stacks the transposed `N_T × N_R` elementary matrices `E_i`, where
/// `E_i` has its unit entry at row `i mod N_T`, column `i div N_T`.
pub fn selection_matrix(n_t: usize, n_r: usize, l: usize) -> ComplexMatrix {
    let n_tr = n_t * n_r;
    let mut e_s = ComplexMatrix::zeros(n_tr * n_r, n_t);
    for i in 0..n_tr {
        let (row, col) = (i % n_t, i / n_t);
        e_s[(i * n_r + col, row)] = c64(1.0, 0.0);
    }
    kron(&e_s, &identity(l))
}

/// `I_{n_r} ⊗ X`.
pub fn block_diagonal(x: &ComplexMatrix, n_r: usize) -> ComplexMatrix {
    kron(&identity(n_r), x)
}
