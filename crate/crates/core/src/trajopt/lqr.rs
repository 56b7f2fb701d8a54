use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::cost::QuadraticCost;
use super::{LocalPolicy, MotorReflex, ReflexDataset, ReflexRecord};
use crate::dynamics::{GaussianState, LinearGaussianDynamics};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, sample_gaussian, symmetrize};
use crate::scalar::Real;

/// Starting Levenberg shift for an indefinite `Q_uu`.
const MU_START: f64 = 1e-8;
const MU_MAX: f64 = 1e10;

/// Second-order expansion of the state-action value at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct QExpansion<T: Real> {
    pub qxuxu: DMatrix<T>,
    pub qxu: DVector<T>,
    /// Shift added to `Q_uu` before inversion (0 when none was needed).
    pub mu: T,
    /// `1 + λ_t`; the controller covariance is `temperature · Q_uu⁻¹`.
    pub temperature: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueExpansion<T: Real> {
    pub vxx: DMatrix<T>,
    pub vx: DVector<T>,
    /// Constant of the deterministic (mean) cost-to-go.
    pub v0: T,
}

impl<T: Real> ValueExpansion<T> {
    pub fn evaluate(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.vxx * x)[(0, 0)] * T::lit(0.5) + x.dot(&self.vx) + self.v0
    }
}

#[derive(Debug, Clone)]
pub struct BackwardPass<T: Real> {
    pub reflexes: Vec<MotorReflex<T>>,
    pub q: Vec<QExpansion<T>>,
    /// `T + 1` entries; the last is the terminal cost.
    pub v: Vec<ValueExpansion<T>>,
}

/// LQR backward pass on the λ-augmented cost.
///
/// For `λ_t > 0` the per-step cost becomes `l_t − λ_t log q_t(u|x)` where
/// `q_t` is the reference controller, and the controller entropy is weighted
/// by `1 + λ_t`, so `Σ_t = (1 + λ_t) Q_uu⁻¹`. With `λ_t = 0` this is plain
/// LQR with `Σ_t = Q_uu⁻¹`.
pub fn lqr_backward<T: Real>(
    dynamics: &LinearGaussianDynamics<T>,
    cost: &QuadraticCost<T>,
    reference: Option<&[MotorReflex<T>]>,
    lambda: &[T],
) -> Result<BackwardPass<T>> {
    let horizon = dynamics.horizon();
    check_dim("cost horizon", horizon, cost.horizon())?;
    check_dim("lambda length", horizon, lambda.len())?;
    let dx = dynamics.state_dim;
    let du = dynamics.action_dim;
    check_dim("cost state dim", dx, cost.state_dim)?;
    check_dim("cost action dim", du, cost.action_dim)?;
    if let Some(r) = reference {
        check_dim("reference horizon", horizon, r.len())?;
    }
    if lambda.iter().any(|l| *l < T::zero() || !l.finite()) {
        return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
    }
    let half = T::lit(0.5);

    let mut reflexes = Vec::with_capacity(horizon);
    let mut qs = Vec::with_capacity(horizon);
    let mut vs = Vec::with_capacity(horizon + 1);
    let mut next = ValueExpansion {
        vxx: cost.terminal_xx.clone(),
        vx: cost.terminal_x.clone(),
        v0: cost.terminal_const,
    };
    vs.push(next.clone());

    for t in (0..horizon).rev() {
        let step = &dynamics.steps[t];
        let l = &cost.steps[t];
        let mut cxuxu = l.lxuxu.clone();
        let mut cxu = l.lxu.clone();
        let mut c0 = l.lconst;
        let lam = lambda[t];
        if lam > T::zero() {
            let r = &reference.ok_or_else(|| {
                Error::InvalidArgument("positive lambda requires a reference policy".into())
            })?[t];
            let prec = crate::linalg::spd_inverse(&r.cov, "reference covariance")?;
            let pk = &prec * &r.gain;
            let pkk = &prec * &r.offset;
            // −log q(u|x) up to a constant: ½ (u − Kx − k)ᵀ P (u − Kx − k)
            let mut h = DMatrix::zeros(dx + du, dx + du);
            h.view_mut((0, 0), (dx, dx)).copy_from(&(r.gain.transpose() * &pk));
            h.view_mut((dx, 0), (du, dx)).copy_from(&(-&pk));
            h.view_mut((0, dx), (dx, du)).copy_from(&(-pk.transpose()));
            h.view_mut((dx, dx), (du, du)).copy_from(&prec);
            let mut g = DVector::zeros(dx + du);
            g.rows_mut(0, dx).copy_from(&(r.gain.transpose() * &pkk));
            g.rows_mut(dx, du).copy_from(&(-&pkk));
            cxuxu += h * lam;
            cxu += g * lam;
            c0 += half * lam * r.offset.dot(&pkk);
        }

        let fxu = &step.fxu;
        let vnext_fc = &next.vx + &next.vxx * &step.fc;
        let qxuxu = symmetrize(&(cxuxu + fxu.transpose() * &next.vxx * fxu));
        let qxu = cxu + fxu.transpose() * &vnext_fc;
        let q0 = c0 + next.v0 + half * (step.fc.transpose() * &next.vxx * &step.fc)[(0, 0)]
            + step.fc.dot(&next.vx);

        let qxx = qxuxu.view((0, 0), (dx, dx)).into_owned();
        let qux = qxuxu.view((dx, 0), (du, dx)).into_owned();
        let quu = qxuxu.view((dx, dx), (du, du)).into_owned();
        let qx = qxu.rows(0, dx).into_owned();
        let qu = qxu.rows(dx, du).into_owned();

        let (chol, mu) = factor_quu(&quu, t)?;
        let gain = -chol.solve(&qux);
        let offset = -chol.solve(&qu);
        let temperature = T::one() + lam;
        let cov = symmetrize(&(chol.inverse() * temperature));

        // V(x) = Q(x, Kx + k), with the unshifted Q_uu.
        let kt_quu = gain.transpose() * &quu;
        let vxx = symmetrize(
            &(&qxx + &kt_quu * &gain + gain.transpose() * &qux + qux.transpose() * &gain),
        );
        let vx = &qx + &kt_quu * &offset + gain.transpose() * &qu + qux.transpose() * &offset;
        let v0 = q0 + half * (offset.transpose() * &quu * &offset)[(0, 0)] + offset.dot(&qu);

        reflexes.push(MotorReflex { gain, offset, cov }.symmetrized());
        qs.push(QExpansion {
            qxuxu,
            qxu,
            mu,
            temperature,
        });
        next = ValueExpansion { vxx, vx, v0 };
        vs.push(next.clone());
    }
    reflexes.reverse();
    qs.reverse();
    vs.reverse();
    for (t, r) in reflexes.iter().enumerate() {
        if !r.gain.iter().chain(r.offset.iter()).chain(r.cov.iter()).all(|v| v.finite()) {
            return Err(Error::NonFinite(format!("reflex at timestep {t}")));
        }
    }
    Ok(BackwardPass {
        reflexes,
        q: qs,
        v: vs,
    })
}

fn factor_quu<T: Real>(quu: &DMatrix<T>, t: usize) -> Result<(Cholesky<T, nalgebra::Dyn>, T)> {
    if let Some(c) = Cholesky::new(quu.clone()) {
        return Ok((c, T::zero()));
    }
    let n = quu.nrows();
    let mut mu = MU_START;
    while mu <= MU_MAX {
        let shifted = quu + DMatrix::identity(n, n) * T::lit(mu);
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, T::lit(mu)));
        }
        mu *= 10.0;
    }
    Err(Error::IndefiniteQuu { timestep: t, mu })
}

/// Propagates Gaussian state marginals through the linear dynamics under
/// the linear-Gaussian controllers. Returns `T + 1` marginals.
pub fn forward_marginals<T: Real>(
    dynamics: &LinearGaussianDynamics<T>,
    reflexes: &[MotorReflex<T>],
    initial: &GaussianState<T>,
) -> Result<Vec<GaussianState<T>>> {
    check_dim("reflex horizon", dynamics.horizon(), reflexes.len())?;
    check_dim("initial mean", dynamics.state_dim, initial.mean.len())?;
    let mut out = Vec::with_capacity(reflexes.len() + 1);
    let mut cur = GaussianState {
        mean: initial.mean.clone(),
        cov: symmetrize(&initial.cov),
    };
    for (step, r) in dynamics.steps.iter().zip(reflexes) {
        let a = step.state_matrix();
        let b = step.action_matrix();
        let closed = &a + &b * &r.gain;
        let mean = &closed * &cur.mean + &b * &r.offset + &step.fc;
        let cov = symmetrize(
            &(&closed * &cur.cov * closed.transpose() + &b * &r.cov * b.transpose() + &step.cov),
        );
        out.push(cur);
        cur = GaussianState { mean, cov };
    }
    out.push(cur);
    Ok(out)
}

/// Supervised records for one condition: the marginal mean at every step
/// plus `samples_per_step` states drawn from each marginal, all paired with
/// that step's reflex.
pub fn build_dataset<T: Real, R: Rng + ?Sized>(
    policy: &LocalPolicy<T>,
    condition: usize,
    samples_per_step: usize,
    rng: &mut R,
) -> Result<ReflexDataset<T>> {
    if !policy.has_marginals() {
        return Err(Error::InvalidArgument("policy has no state marginals".into()));
    }
    let mut records = Vec::with_capacity(policy.horizon() * (1 + samples_per_step));
    for (t, reflex) in policy.reflexes.iter().enumerate() {
        let mean = &policy.marginal_means[t];
        let factor = psd_sqrt(&policy.marginal_covs[t])?;
        let mut push = |state: DVector<T>| {
            records.push(ReflexRecord {
                condition,
                timestep: t,
                action: reflex.mean_action(&state),
                state,
                reflex: reflex.clone(),
                cov_prev: reflex.cov.clone(),
            })
        };
        push(mean.clone());
        for _ in 0..samples_per_step {
            push(sample_gaussian(mean, &factor, rng));
        }
    }
    Ok(ReflexDataset { records })
}

/// Forward pass: marginals for `reflexes` plus the S-step dataset.
pub fn lqr_forward<T: Real, R: Rng + ?Sized>(
    dynamics: &LinearGaussianDynamics<T>,
    reflexes: Vec<MotorReflex<T>>,
    initial: &GaussianState<T>,
    condition: usize,
    samples_per_step: usize,
    rng: &mut R,
) -> Result<(LocalPolicy<T>, ReflexDataset<T>)> {
    let marginals = forward_marginals(dynamics, &reflexes, initial)?;
    let mut policy = LocalPolicy::from_reflexes(reflexes);
    policy.set_marginals(marginals);
    let dataset = build_dataset(&policy, condition, samples_per_step, rng)?;
    Ok((policy, dataset))
}
