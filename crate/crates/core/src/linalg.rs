//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Cholesky factorization that fails loudly instead of returning `None`.
pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

/// `ln|M|` of a symmetric positive definite matrix.
pub fn spd_log_det<T: Real>(m: &DMatrix<T>, what: &str) -> Result<T> {
    let chol = cholesky(m, what)?;
    let l = chol.l_dirty();
    let mut acc = T::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    Ok(acc * T::lit(2.0))
}

/// Lower Cholesky factor of a positive semi-definite matrix. Adds a growing
/// diagonal jitter until the factorization succeeds.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let sym = symmetrize(m);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol.l());
    }
    let n = sym.nrows();
    let scale = (0..n).map(|i| sym[(i, i)].abs()).fold(T::one(), |a, b| a.max(b));
    let mut jitter = T::lit(1e-14) * scale;
    for _ in 0..12 {
        let shifted = &sym + DMatrix::identity(n, n) * jitter;
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(chol.l());
        }
        jitter *= T::lit(10.0);
    }
    Err(Error::NotPositiveDefinite("covariance for sampling".into()))
}

/// Draws from `N(mean, L Lᵀ)` given the lower factor `L`.
pub fn sample_gaussian<T: Real, R: Rng + ?Sized>(
    mean: &DVector<T>,
    factor: &DMatrix<T>,
    rng: &mut R,
) -> DVector<T> {
    let eta = DVector::from_fn(mean.len(), |_, _| T::standard_normal(rng));
    mean + factor * eta
}

pub fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.finite())
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or(T::lit(f64::MAX)), |a, b| a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        let ld = spd_log_det(&m, "test").unwrap();
        assert!((ld - 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn psd_sqrt_handles_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_sqrt(&m).unwrap();
        assert!((&l * l.transpose() - &m).norm() < 1e-6);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_inverse(&m, "q").is_err());
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let l = psd_sqrt(&cov).unwrap();
        let n = 40_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..n {
            acc += sample_gaussian(&mean, &l, &mut rng);
        }
        acc /= n as f64;
        assert!((acc - mean).norm() < 0.03);
    }
}
