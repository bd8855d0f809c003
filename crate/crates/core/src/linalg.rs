//! Dense complex linear algebra helpers shared by the whole pipeline.
//!
//! Everything here operates on `Array2<c64>` in the computational basis.
//! Hermitian eigenproblems go through LAPACK (`zheev`) via `ndarray-linalg`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{c64, Eigh, EigValsh, UPLO};

use crate::error::{Error, Result};

/// Self-adjoint dense matrix with a checked hermiticity invariant.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    mat: Array2<c64>,
}

impl HermitianOperator {
    /// Wraps a matrix, enforcing `max|M - M^dag| <= 1e-10 * max|M|`.
    pub fn new(mat: Array2<c64>) -> Result<Self> {
        let dev = hermiticity_deviation(&mat.view());
        let scale = max_abs(&mat.view()).max(1e-300);
        if dev > 1e-10 * scale.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not Hermitian: deviation {dev:.3e} vs scale {scale:.3e}"
            )));
        }
        let mut mat = mat;
        hermitize(&mut mat);
        Ok(Self { mat })
    }

    /// Wraps without checking; caller guarantees hermiticity.
    pub fn from_unchecked(mut mat: Array2<c64>) -> Self {
        hermitize(&mut mat);
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &Array2<c64> {
        &self.mat
    }

    pub fn into_inner(self) -> Array2<c64> {
        self.mat
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let ev = eigvalsh(&self.mat)?;
        Ok(ev.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

/// Positive unit-trace matrix; the optimization variable.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    mat: Array2<c64>,
}

impl DensityOperator {
    /// Checks hermiticity, positivity (within `tol`) and unit trace (within `tol`).
    pub fn new(mat: Array2<c64>, tol: f64) -> Result<Self> {
        let op = HermitianOperator::new(mat)?;
        let min = op.min_eigenvalue()?;
        if min < -tol {
            return Err(Error::InvalidArgument(format!(
                "density operator has negative eigenvalue {min:.3e}"
            )));
        }
        let tr = trace(&op.mat().view()).re;
        if (tr - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "density operator trace {tr} is not 1"
            )));
        }
        Ok(Self { mat: op.into_inner() })
    }

    pub fn from_unchecked(mut mat: Array2<c64>) -> Self {
        hermitize(&mut mat);
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> &Array2<c64> {
        &self.mat
    }

    pub fn into_inner(self) -> Array2<c64> {
        self.mat
    }
}

pub fn identity(d: usize) -> Array2<c64> {
    Array2::eye(d)
}

/// `(M + M^dag) / 2` in place.
pub fn hermitize(m: &mut Array2<c64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = m[(i, j)];
            let b = m[(j, i)];
            let avg = 0.5 * (a + b.conj());
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(i, i)] = c64::new(m[(i, i)].re, 0.0);
    }
}

pub fn hermiticity_deviation(m: &ArrayView2<c64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn max_abs(m: &ArrayView2<c64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn trace(m: &ArrayView2<c64>) -> c64 {
    m.diag().sum()
}

/// `Tr(A B)` without forming the product.
pub fn tr_prod(a: &ArrayView2<c64>, b: &ArrayView2<c64>) -> c64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = c64::new(0.0, 0.0);
    for (row, col) in a.axis_iter(Axis(0)).zip(b.axis_iter(Axis(1))) {
        acc += row.iter().zip(col.iter()).map(|(x, y)| x * y).sum::<c64>();
    }
    acc
}

/// Frobenius inner product `Re Tr(A^dag B)`.
pub fn frob_inner(a: &ArrayView2<c64>, b: &ArrayView2<c64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frob_norm(a: &ArrayView2<c64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigendecomposition of a Hermitian matrix: ascending eigenvalues and
/// the unitary whose columns are the eigenvectors.
pub fn eigh(m: &Array2<c64>) -> Result<(Array1<f64>, Array2<c64>)> {
    // The backend hands row-major data to LAPACK unchanged, so it
    // diagonalizes M^T = conj(M); conjugating the vectors restores
    // M = V diag(vals) V^dag.
    let (vals, vecs) = m.eigh(UPLO::Lower)?;
    Ok((vals, vecs.mapv(|z| z.conj())))
}

/// Eigenvalues only (ascending).
pub fn eigvalsh(m: &Array2<c64>) -> Result<Array1<f64>> {
    Ok(m.eigvalsh(UPLO::Lower)?)
}

pub fn min_eigvalsh(m: &Array2<c64>) -> Result<f64> {
    Ok(eigvalsh(m)?.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Applies a scalar function to the spectrum: `U f(Lambda) U^dag`.
pub fn herm_fn(m: &Array2<c64>, f: impl Fn(f64) -> f64) -> Result<Array2<c64>> {
    let (vals, vecs) = eigh(m)?;
    Ok(reconstruct(&vals.mapv(f), &vecs))
}

/// `U diag(vals) U^dag`.
pub fn reconstruct(vals: &Array1<f64>, vecs: &Array2<c64>) -> Array2<c64> {
    let scaled = vecs * &vals.mapv(|v| c64::new(v, 0.0)).insert_axis(Axis(0));
    let out = scaled.dot(&conj_transpose(&vecs.view()));
    out
}

pub fn conj_transpose(m: &ArrayView2<c64>) -> Array2<c64> {
    m.t().mapv(|z| z.conj())
}

/// PSD square root via eigendecomposition; eigenvalues clamped at zero.
pub fn psd_sqrt(m: &Array2<c64>) -> Result<Array2<c64>> {
    herm_fn(m, |v| v.max(0.0).sqrt())
}

/// Projection onto the PSD cone (negative eigenvalues clipped).
pub fn psd_projection(m: &Array2<c64>) -> Result<Array2<c64>> {
    herm_fn(m, |v| v.max(0.0))
}

/// Kronecker product.
pub fn kron(a: &ArrayView2<c64>, b: &ArrayView2<c64>) -> Array2<c64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij == c64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(ndarray::s![i * rb..(i + 1) * rb, j * cb..(j + 1) * cb]);
            block.assign(&b.mapv(|z| z * aij));
        }
    }
    out
}

/// View of the `(i, j)` block of an `n*b`-dimensional matrix with block size `b`.
pub fn block<'a>(m: &'a Array2<c64>, i: usize, j: usize, b: usize) -> ArrayView2<'a, c64> {
    m.slice(ndarray::s![i * b..(i + 1) * b, j * b..(j + 1) * b])
}

/// Adds `coeff * B` into the `(i, j)` block of `m`.
pub fn add_to_block(m: &mut Array2<c64>, i: usize, j: usize, b: usize, coeff: c64, bm: &ArrayView2<c64>) {
    let mut blk = m.slice_mut(ndarray::s![i * b..(i + 1) * b, j * b..(j + 1) * b]);
    blk.zip_mut_with(bm, |dst, src| *dst += coeff * src);
}

/// For each diagonal A-block index `z`, computes `(I_A (x) S) X (I_A (x) S)`
/// restricted structure: sandwiches every `b x b` block of `X` with `S`.
pub fn sandwich_blockwise(s: &Array2<c64>, x: &Array2<c64>, n_blocks: usize) -> Array2<c64> {
    let b = s.nrows();
    let mut out = Array2::zeros((n_blocks * b, n_blocks * b));
    for i in 0..n_blocks {
        for j in 0..n_blocks {
            let xij = block(x, i, j, b);
            let prod = s.dot(&xij).dot(s);
            out.slice_mut(ndarray::s![i * b..(i + 1) * b, j * b..(j + 1) * b])
                .assign(&prod);
        }
    }
    out
}
