//! Small dense vector/matrix helpers. Everything operates on flat `f64`
//! slices; matrices are row-major.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit Euclidean norm in place.
pub fn normalize_mut(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !n.is_finite() || n < 1e-300 {
        return Err(Error::DegenerateNorm);
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Column means of a row-major n x d matrix.
pub fn mean_rows(data: &[f64], d: usize) -> Vec<f64> {
    debug_assert!(d > 0 && data.len().is_multiple_of(d));
    let n = data.len() / d;
    let mut mean = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Lower-triangular Cholesky factor of a symmetric positive semidefinite
/// row-major d x d matrix. Semidefinite pivots (within a relative tolerance)
/// produce a zero column; genuinely negative pivots are rejected.
pub fn cholesky_lower(a: &[f64], d: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let scale = (0..d)
        .map(|i| a[i * d + i].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let tol = 1e-10 * scale;
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if diag < -tol {
            return Err(Error::NotPositiveSemidefinite);
        }
        let pivot = if diag <= tol { 0.0 } else { diag.sqrt() };
        l[j * d + j] = pivot;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= l[i * d + k] * l[j * d + k];
            }
            if pivot > 0.0 {
                l[i * d + j] = v / pivot;
            } else if v.abs() > tol {
                return Err(Error::NotPositiveSemidefinite);
            }
        }
    }
    Ok(l)
}
