use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{decode_reflex, GmrPolicy, Mode};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{spd_inverse, spd_log_det};
use crate::nn::GradientTape;
use crate::scalar::{sigmoid, Real};
use crate::trajopt::{MotorReflex, ReflexDataset};

/// The two parts of the reflex divergence term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflexKl<T> {
    /// `tr(Σ_p⁻¹ Σ_Ψ) − ln|Σ_Ψ|`
    pub cov: T,
    /// `Δuᵀ Σ_p⁻¹ Δu`
    pub mean: T,
}

impl<T: Real> ReflexKl<T> {
    pub fn total(&self) -> T {
        self.cov + self.mean
    }
}

/// Reflex divergence trained on actions: the offset error is eliminated
/// through `Δk = Δu − ΔK x`, so only `Δu = (Ψ_K x + Ψ_k) − u_p` enters the
/// mean term.
pub fn reflex_kl_loss<T: Real>(
    reflex: &MotorReflex<T>,
    reference_action: &DVector<T>,
    cov_prev: &DMatrix<T>,
    x: &DVector<T>,
) -> Result<ReflexKl<T>> {
    check_dim("reference action", reflex.action_dim(), reference_action.len())?;
    check_dim("reflex state", reflex.state_dim(), x.len())?;
    let prec = spd_inverse(cov_prev, "reference covariance")?;
    let du = reflex.mean_action(x) - reference_action;
    Ok(ReflexKl {
        cov: (&prec * &reflex.cov).trace() - spd_log_det(&reflex.cov, "reflex covariance")?,
        mean: (du.transpose() * &prec * &du)[(0, 0)],
    })
}

/// Same divergence evaluated from controller parameters, with
/// `ΔK = Ψ_K − K_p` and `Δk = Ψ_k − k_p`.
pub fn reflex_kl_direct<T: Real>(
    reflex: &MotorReflex<T>,
    reference: &MotorReflex<T>,
    cov_prev: &DMatrix<T>,
    x: &DVector<T>,
) -> Result<ReflexKl<T>> {
    let prec = spd_inverse(cov_prev, "reference covariance")?;
    let dgain = &reflex.gain - &reference.gain;
    let doffset = &reflex.offset - &reference.offset;
    let e = dgain * x + doffset;
    Ok(ReflexKl {
        cov: (&prec * &reflex.cov).trace() - spd_log_det(&reflex.cov, "reflex covariance")?,
        mean: (e.transpose() * &prec * &e)[(0, 0)],
    })
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn latent_kl<T: Real>(mu: &DVector<T>, sigma: &DVector<T>) -> T {
    let half = T::lit(0.5);
    mu.iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| half * (s * s + m * m - T::one() - (s * s).ln()))
        .fold(T::zero(), |a, b| a + b)
}

/// A reflex dataset laid out for batched loss evaluation.
#[derive(Debug, Clone)]
pub struct TrainingSet<T: Real> {
    pub states: DMatrix<T>,
    pub actions: DMatrix<T>,
    pub precisions: Vec<DMatrix<T>>,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(dataset: &ReflexDataset<T>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = dataset.len();
        let dx = dataset.state_dim();
        let du = dataset.action_dim();
        let mut states = DMatrix::zeros(dx, n);
        let mut actions = DMatrix::zeros(du, n);
        let mut precisions = Vec::with_capacity(n);
        for (i, r) in dataset.records.iter().enumerate() {
            check_dim("record state", dx, r.state.len())?;
            check_dim("record action", du, r.action.len())?;
            states.set_column(i, &r.state);
            actions.set_column(i, &r.action);
            precisions.push(spd_inverse(&r.cov_prev, "record covariance")?);
        }
        Ok(Self {
            states,
            actions,
            precisions,
        })
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            states: self.states.select_columns(indices),
            actions: self.actions.select_columns(indices),
            precisions: indices.iter().map(|&i| self.precisions[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmrLossBreakdown<T> {
    /// Mean squared reconstruction error, term (i).
    pub recon: T,
    /// Mean latent KL to the unit Gaussian, term (ii), unweighted.
    pub latent_kl: T,
    /// Mean reflex divergence, term (iii).
    pub reflex_kl: T,
    pub reflex_cov: T,
    pub reflex_mean: T,
    /// `Σ Θ²`, term (iv), unweighted.
    pub l2: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> GmrLossBreakdown<T> {
    pub fn total(&self) -> T {
        self.recon + self.alpha * self.latent_kl + self.reflex_kl + self.beta * self.l2
    }
}

#[derive(Debug, Clone)]
pub struct GmrGradients<T: Real> {
    pub encoder: GradientTape<T>,
    pub decoder: GradientTape<T>,
    pub translator: GradientTape<T>,
}

impl<T: Real> GmrGradients<T> {
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.encoder.to_flat();
        v.extend(self.decoder.to_flat());
        v.extend(self.translator.to_flat());
        v
    }
}

/// Loss and gradients over the whole dataset, with the latent sampled
/// through the reparameterization `z = μ + σ ⊙ η` in train mode and
/// `z = μ` in test mode.
pub fn gmr_loss<T: Real, R: Rng + ?Sized>(
    policy: &GmrPolicy<T>,
    dataset: &ReflexDataset<T>,
    alpha: T,
    beta: T,
    rng: &mut R,
) -> Result<(GmrLossBreakdown<T>, GmrGradients<T>)> {
    let set = TrainingSet::new(dataset)?;
    let l = policy.latent_dim();
    let noise = match policy.mode {
        Mode::Train => DMatrix::from_fn(l, set.len(), |_, _| T::standard_normal(rng)),
        Mode::Test => DMatrix::zeros(l, set.len()),
    };
    gmr_loss_with_noise(policy, &set, &noise, alpha, beta)
}

/// [`gmr_loss`] with the standard-normal latent noise supplied explicitly
/// (`latent_dim × batch`). Pass zeros for the mean-latent loss.
pub fn gmr_loss_with_noise<T: Real>(
    policy: &GmrPolicy<T>,
    set: &TrainingSet<T>,
    noise: &DMatrix<T>,
    alpha: T,
    beta: T,
) -> Result<(GmrLossBreakdown<T>, GmrGradients<T>)> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let dx = policy.state_dim;
    let du = policy.action_dim;
    let l = policy.latent_dim();
    check_dim("training state dim", dx, set.states.nrows())?;
    check_dim("training action dim", du, set.actions.nrows())?;
    check_dim("noise rows", l, noise.nrows())?;
    check_dim("noise columns", n, noise.ncols())?;

    let inv_n = T::one() / T::from_usize(n).unwrap();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let floor = T::lit(policy.config.sigma_floor);
    let jitter = T::lit(policy.config.cov_jitter);

    // Encoder.
    let enc = policy.encoder.trace(&set.states)?;
    let enc_out = enc.output();
    let mu = enc_out.rows(0, l).into_owned();
    let half_exp = enc_out.rows(l, l).map(|lv| (lv * half).exp());
    let sigma = half_exp.map(|e| e + floor);
    let z = &mu + sigma.component_mul(noise);

    // Decoder, term (i).
    let dec = policy.decoder.trace(&z)?;
    let resid = &set.states - dec.output();
    let recon = resid.norm_squared() * inv_n;
    let d_recon = &resid * (-two * inv_n);

    // Term (ii).
    let mut latent = T::zero();
    for c in 0..n {
        latent += latent_kl(&mu.column(c).into_owned(), &sigma.column(c).into_owned());
    }
    latent *= inv_n;

    // Translator, term (iii).
    let trans = policy.translator.trace(&z)?;
    let params = trans.output();
    let mut d_params = DMatrix::zeros(params.nrows(), n);
    let mut cov_sum = T::zero();
    let mut mean_sum = T::zero();
    for c in 0..n {
        let col: Vec<T> = params.column(c).iter().copied().collect();
        let dec_r = decode_reflex(&col, dx, du, jitter);
        let x = set.states.column(c);
        let prec = &set.precisions[c];
        let delta_u = &dec_r.gain * x + &dec_r.offset - set.actions.column(c);
        let g_u = prec * &delta_u * two;
        mean_sum += (delta_u.transpose() * prec * &delta_u)[(0, 0)];

        let chol = crate::linalg::cholesky(&dec_r.cov, "generated reflex covariance")?;
        let logdet = {
            let lc = chol.l_dirty();
            (0..du).fold(T::zero(), |a, i| a + lc[(i, i)].ln()) * two
        };
        cov_sum += (prec * &dec_r.cov).trace() - logdet;
        let g_cov = prec - chol.inverse();
        let g_factor = (&g_cov + g_cov.transpose()) * &dec_r.factor;

        let mut idx = 0;
        for r in 0..du {
            for k in 0..dx {
                d_params[(idx, c)] = g_u[r] * x[k] * inv_n;
                idx += 1;
            }
        }
        for r in 0..du {
            d_params[(idx, c)] = g_u[r] * inv_n;
            idx += 1;
        }
        for r in 0..du {
            for k in 0..=r {
                let g = g_factor[(r, k)];
                d_params[(idx, c)] = if r == k {
                    g * sigmoid(col[idx])
                } else {
                    g
                } * inv_n;
                idx += 1;
            }
        }
    }
    let reflex_cov = cov_sum * inv_n;
    let reflex_mean = mean_sum * inv_n;

    let (mut g_trans, dz_trans) = policy.translator.backward(&trans, &d_params)?;
    let (mut g_dec, dz_dec) = policy.decoder.backward(&dec, &d_recon)?;
    let dz = dz_trans + dz_dec;

    // Through the reparameterization and the latent KL.
    let d_mu = &dz + &mu * (alpha * inv_n);
    let d_sigma = dz.component_mul(noise)
        + sigma.map(|s| s - T::one() / s) * (alpha * inv_n);
    let d_logvar = d_sigma.component_mul(&half_exp) * half;
    let mut d_enc = DMatrix::zeros(2 * l, n);
    d_enc.rows_mut(0, l).copy_from(&d_mu);
    d_enc.rows_mut(l, l).copy_from(&d_logvar);
    let (mut g_enc, _) = policy.encoder.backward(&enc, &d_enc)?;

    policy.encoder.add_l2_gradient(&mut g_enc, beta);
    policy.decoder.add_l2_gradient(&mut g_dec, beta);
    policy.translator.add_l2_gradient(&mut g_trans, beta);

    let breakdown = GmrLossBreakdown {
        recon,
        latent_kl: latent,
        reflex_kl: reflex_cov + reflex_mean,
        reflex_cov,
        reflex_mean,
        l2: policy.squared_norm(),
        alpha,
        beta,
    };
    if !breakdown.total().finite() {
        return Err(Error::NonFinite("GMR loss".into()));
    }
    Ok((
        breakdown,
        GmrGradients {
            encoder: g_enc,
            decoder: g_dec,
            translator: g_trans,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(k: f64, off: f64, var: f64) -> MotorReflex<f64> {
        MotorReflex::new(
            DMatrix::from_element(1, 1, k),
            DVector::from_element(1, off),
            DMatrix::from_element(1, 1, var),
        )
        .unwrap()
    }

    #[test]
    fn matching_reflex_has_zero_mean_term() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let r = MotorReflex::<f64>::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -2.0, 0.5, 0.3, 0.0]),
            DVector::from_vec(vec![0.1, -0.4]),
            sigma.clone(),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.2, 1.0, -0.7]);
        let kl = reflex_kl_loss(&r, &r.mean_action(&x), &sigma, &x).unwrap();
        assert!(kl.mean.abs() < 1e-14);
        let expected_cov = 2.0 - spd_log_det(&sigma, "s").unwrap();
        assert!((kl.cov - expected_cov).abs() < 1e-13);
    }

    #[test]
    fn scalar_mean_term() {
        // mean action 1, reference 0, Σ_p = 2 => 1·½·1
        let r = scalar(0.0, 1.0, 1.0);
        let kl = reflex_kl_loss(
            &r,
            &DVector::zeros(1),
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, 3.0),
        )
        .unwrap();
        assert!((kl.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_reference_rejected() {
        let r = scalar(0.0, 1.0, 1.0);
        assert!(reflex_kl_loss(&r, &DVector::zeros(1), &DMatrix::zeros(1, 1), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn latent_kl_zero_at_standard_normal() {
        let mu = DVector::zeros(3);
        let sigma = DVector::from_element(3, 1.0);
        assert_eq!(latent_kl(&mu, &sigma), 0.0);
        assert!(latent_kl(&DVector::from_element(3, 0.1), &sigma) > 0.0);
        assert!(latent_kl(&mu, &DVector::from_element(3, 0.9)) > 0.0);
    }

    #[test]
    fn offset_argmin_is_action_minus_feedback() {
        let prec_cov = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.2]);
        let gain = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]);
        let x = DVector::from_vec(vec![0.7, -1.1]);
        let target = DVector::from_vec(vec![0.25, -0.6]);
        let best = &target - &gain * &x;
        let eval = |off: &DVector<f64>| {
            let r = MotorReflex::new(gain.clone(), off.clone(), DMatrix::identity(2, 2)).unwrap();
            reflex_kl_loss(&r, &target, &prec_cov, &x).unwrap().mean
        };
        let at_best = eval(&best);
        assert!(at_best.abs() < 1e-14);
        for d in [[1e-3, 0.0], [0.0, -1e-3], [0.5, 0.5]] {
            assert!(eval(&(&best + DVector::from_row_slice(&d))) > at_best);
        }
    }
}
