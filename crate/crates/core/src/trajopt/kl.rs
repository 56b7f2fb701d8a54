use nalgebra::{DMatrix, DVector};

use super::{LocalPolicy, MotorReflex};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{spd_inverse, spd_log_det};
use crate::scalar::Real;

/// `E_{x ~ N(mean, cov)} KL(p(u|x) ‖ q(u|x))` for two linear-Gaussian
/// controllers.
pub fn reflex_kl<T: Real>(
    p: &MotorReflex<T>,
    q: &MotorReflex<T>,
    mean: &DVector<T>,
    cov: &DMatrix<T>,
) -> Result<T> {
    check_dim("kl action dim", q.action_dim(), p.action_dim())?;
    check_dim("kl state dim", q.state_dim(), p.state_dim())?;
    let d = T::from_usize(p.action_dim()).unwrap();
    let q_prec = spd_inverse(&q.cov, "reference covariance")?;
    let logdet_q = spd_log_det(&q.cov, "reference covariance")?;
    let logdet_p = spd_log_det(&p.cov, "policy covariance")?;

    let dk = &p.gain - &q.gain;
    let dmu = &dk * mean + (&p.offset - &q.offset);
    let mean_term = (dmu.transpose() * &q_prec * &dmu)[(0, 0)];
    let spread_term = (dk.transpose() * &q_prec * &dk * cov).trace();
    let trace_term = (&q_prec * &p.cov).trace();
    let kl = T::lit(0.5) * (trace_term - d + logdet_q - logdet_p + mean_term + spread_term);
    // Round-off can push an exact zero slightly negative.
    Ok(kl.max(T::zero()))
}

/// Trajectory KL `D(p(τ) ‖ q(τ))` for two controllers sharing dynamics,
/// evaluated under `p`'s state marginals.
pub fn trajectory_kl<T: Real>(p: &LocalPolicy<T>, reference: &[MotorReflex<T>]) -> Result<T> {
    if !p.has_marginals() {
        return Err(Error::InvalidArgument("policy has no state marginals".into()));
    }
    check_dim("reference horizon", p.horizon(), reference.len())?;
    let mut total = T::zero();
    for (t, (pr, qr)) in p.reflexes.iter().zip(reference).enumerate() {
        total += reflex_kl(pr, qr, &p.marginal_means[t], &p.marginal_covs[t])?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_reflex(k: f64, off: f64, var: f64) -> MotorReflex<f64> {
        MotorReflex::new(
            DMatrix::from_element(1, 1, k),
            DVector::from_element(1, off),
            DMatrix::from_element(1, 1, var),
        )
        .unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let r = scalar_reflex(-0.4, 0.3, 0.7);
        let kl = reflex_kl(&r, &r, &DVector::from_element(1, 2.0), &DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn offset_difference_closed_form() {
        let (k, k2, s2) = (0.8, -0.3, 0.25);
        let p = scalar_reflex(0.2, k, s2);
        let q = scalar_reflex(0.2, k2, s2);
        let kl = reflex_kl(&p, &q, &DVector::from_element(1, 1.5), &DMatrix::zeros(1, 1)).unwrap();
        let expected = (k - k2) * (k - k2) / (2.0 * s2);
        assert!((kl - expected).abs() < 1e-14);
    }

    #[test]
    fn singular_reference_errors() {
        let p = scalar_reflex(0.0, 0.0, 1.0);
        let mut q = p.clone();
        q.cov[(0, 0)] = 0.0;
        assert!(reflex_kl(&p, &q, &DVector::zeros(1), &DMatrix::zeros(1, 1)).is_err());
    }
}
