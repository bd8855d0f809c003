//! Quadrature rules: Gauss-Legendre nodes and an adaptive Simpson rule for
//! matrix-valued radial integrands.

use ndarray::Array2;
use ndarray_linalg::c64;

use crate::error::{Error, Result};
use crate::linalg::max_abs;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes found by Newton iteration on the Legendre polynomial from the
/// Chebyshev initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // initial guess: roots ordered descending in cos argument
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

/// Gauss-Hermite nodes and weights for `int e^{-x^2} f(x) dx`, via the
/// Golub-Welsch eigenproblem of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    use ndarray_linalg::{Eigh, UPLO};
    let mut j = Array2::<f64>::zeros((n, n));
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let (vals, vecs) = j.eigh(UPLO::Lower).expect("Jacobi matrix eigendecomposition");
    let mu0 = std::f64::consts::PI.sqrt();
    let nodes: Vec<f64> = vals.to_vec();
    let weights: Vec<f64> = (0..n).map(|i| mu0 * vecs[(0, i)] * vecs[(0, i)]).collect();
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Adaptive Simpson integration of a matrix-valued function with an
/// absolute max-norm tolerance. Fails with diagnostics if the recursion
/// depth limit is reached before the local error estimate converges.
pub fn adaptive_simpson_mat<F>(f: &mut F, a: f64, b: f64, tol: f64, max_depth: usize) -> Result<Array2<c64>>
where
    F: FnMut(f64) -> Array2<c64>,
{
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(&fa, &fm, &fb, b - a);
    simpson_recurse(f, a, b, &fa, &fm, &fb, &whole, tol, max_depth)
}

fn simpson(fa: &Array2<c64>, fm: &Array2<c64>, fb: &Array2<c64>, h: f64) -> Array2<c64> {
    (fa + &(fm * c64::new(4.0, 0.0)) + fb) * c64::new(h / 6.0, 0.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: &Array2<c64>,
    fm: &Array2<c64>,
    fb: &Array2<c64>,
    whole: &Array2<c64>,
    tol: f64,
    depth: usize,
) -> Result<Array2<c64>>
where
    F: FnMut(f64) -> Array2<c64>,
{
    let m = 0.5 * (a + b);
    let flm = f(0.5 * (a + m));
    let frm = f(0.5 * (m + b));
    let left = simpson(fa, &flm, fm, m - a);
    let right = simpson(fm, &frm, fb, b - m);
    let sum = &left + &right;
    let err = max_abs(&(&sum - whole).view()) / 15.0;
    if err <= tol {
        return Ok(&sum + &((&sum - whole) * c64::new(1.0 / 15.0, 0.0)));
    }
    if depth == 0 {
        return Err(Error::NumericalFailure(format!(
            "adaptive Simpson failed to converge on [{a:.6}, {b:.6}]: local error {err:.3e} > {tol:.3e}"
        )));
    }
    let l = simpson_recurse(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1)?;
    let r = simpson_recurse(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}
