//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Spectral norm (largest singular value). Zero for empty matrices.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

/// Spectral norm of a complex matrix.
pub fn spectral_norm_c<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

/// Smallest singular value of a complex square matrix.
pub fn min_singular_value_c<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

/// Frobenius-nearest matrix with spectral norm at most `radius`.
///
/// Singular values above the radius are clipped; the singular vectors are
/// kept. Matrices already inside the ball are returned untouched. The right
/// (or left) singular basis comes from the symmetric eigendecomposition of
/// the smaller Gram matrix, which stays exact when singular values repeat.
pub fn clip_spectral_norm<T: Real>(m: &DMatrix<T>, radius: T) -> DMatrix<T> {
    let radius = radius.max(T::zero());
    if spectral_norm(m) <= radius {
        return m.clone();
    }
    let left = m.nrows() < m.ncols();
    let gram = if left { m * m.transpose() } else { m.transpose() * m };
    let eig = gram.symmetric_eigen();
    let shrink = eig.eigenvalues.map(|l| {
        let s = l.max(T::zero()).sqrt();
        if s > radius {
            radius / s
        } else {
            T::one()
        }
    });
    let f = &eig.eigenvectors * DMatrix::from_diagonal(&shrink) * eig.eigenvectors.transpose();
    if left {
        f * m
    } else {
        m * f
    }
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range<T: Real>(m: &DMatrix<T>) -> (T, T) {
    if m.is_empty() {
        return (T::zero(), T::zero());
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b));
    let max = eig.eigenvalues.iter().copied().fold(T::min_value().unwrap_or_else(|| -T::one()), |a, b| a.max(b));
    (min, max)
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * T::one().max(m.amax())
}

pub fn block_diagonal<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows() + b.nrows();
    let m = a.ncols() + b.ncols();
    let mut out = DMatrix::zeros(n, m);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|v| Complex::new(v, T::zero()))
}

pub fn all_finite<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Builds a matrix from nested rows, rejecting ragged or empty input.
pub fn matrix_from_rows<T: Real>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::invalid(format!("{what}: matrix has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::invalid(format!("{what}: matrix has no columns")));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| lit(rows[i][j])))
}

pub fn matrix_to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| crate::scalar::to_f64(m[(i, j)])).collect())
        .collect()
}

pub(crate) fn check_len<T: Real>(v: &DVector<T>, expected: usize, what: &str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::invalid(format!(
            "{what}: expected length {expected}, got {}",
            v.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_shape<T: Real>(m: &DMatrix<T>, shape: (usize, usize), what: &str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::invalid(format!(
            "{what}: expected shape {}x{}, got {}x{}",
            shape.0,
            shape.1,
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Modulus of a complex scalar as a real.
pub(crate) fn modulus<T: Real>(z: Complex<T>) -> T {
    ComplexField::modulus(z)
}
