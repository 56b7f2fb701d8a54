use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::TrainingSet;
use super::Mode;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, sample_gaussian};
use crate::nn::{Activation, GradientTape, Network};
use crate::scalar::Real;
use crate::trajopt::MotorReflex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Diagonal of the fixed exploration covariance.
    pub exploration_variance: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            hidden_layers: 2,
            exploration_variance: 1e-2,
        }
    }
}

/// State → action-mean network with a fixed Gaussian exploration noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePolicy<T: Real> {
    pub net: Network<T>,
    pub exploration_cov: DMatrix<T>,
    pub config: BaselineConfig,
    pub mode: Mode,
}

impl<T: Real> BaselinePolicy<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: BaselineConfig,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![state_dim];
        widths.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
        widths.push(action_dim);
        Self {
            net: Network::init(&widths, Activation::Relu, Activation::Identity, rng),
            exploration_cov: DMatrix::identity(action_dim, action_dim)
                * T::lit(config.exploration_variance),
            config,
            mode: Mode::Test,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn mean_action(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let u = self.net.forward(x)?;
        if !u.iter().all(|v| v.finite()) {
            return Err(Error::NonFinite("baseline output".into()));
        }
        Ok(u)
    }

    pub fn act<R: Rng + ?Sized>(&self, x: &DVector<T>, rng: &mut R) -> Result<DVector<T>> {
        let mean = self.mean_action(x)?;
        Ok(match self.mode {
            Mode::Test => mean,
            Mode::Train => sample_gaussian(&mean, &psd_sqrt(&self.exploration_cov)?, rng),
        })
    }

    /// First-order expansion of the network at `x` as a linear-Gaussian
    /// controller.
    pub fn linearize(&self, x: &DVector<T>) -> Result<MotorReflex<T>> {
        check_dim("baseline state", self.state_dim(), x.len())?;
        let du = self.action_dim();
        let input = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let trace = self.net.trace(&input)?;
        let mut jac = DMatrix::zeros(du, x.len());
        for i in 0..du {
            let mut up = DMatrix::zeros(du, 1);
            up[(i, 0)] = T::one();
            let (_, dx) = self.net.backward(&trace, &up)?;
            jac.row_mut(i).copy_from(&dx.column(0).transpose());
        }
        let mean = trace.output().column(0).into_owned();
        let offset = &mean - &jac * x;
        Ok(MotorReflex {
            gain: jac,
            offset,
            cov: self.exploration_cov.clone(),
        })
    }
}

/// Precision-weighted action regression: mean `Δuᵀ Σ_p⁻¹ Δu` plus
/// `β Σ Θ²`, with its parameter gradient.
pub fn baseline_loss<T: Real>(
    policy: &BaselinePolicy<T>,
    set: &TrainingSet<T>,
    beta: T,
) -> Result<(T, GradientTape<T>)> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let trace = policy.net.trace(&set.states)?;
    let resid = trace.output() - &set.actions;
    let mut upstream = DMatrix::zeros(resid.nrows(), n);
    let mut total = T::zero();
    for c in 0..n {
        let d = resid.column(c);
        let pd = &set.precisions[c] * d;
        total += d.dot(&pd);
        upstream.set_column(c, &(pd * (T::lit(2.0) * inv_n)));
    }
    let (mut tape, _) = policy.net.backward(&trace, &upstream)?;
    policy.net.add_l2_gradient(&mut tape, beta);
    let loss = total * inv_n + beta * policy.net.squared_norm();
    if !loss.finite() {
        return Err(Error::NonFinite("baseline loss".into()));
    }
    Ok((loss, tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajopt::{ReflexDataset, ReflexRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_fit_leaves_only_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy: BaselinePolicy<f64> = BaselinePolicy::new(3, 2, BaselineConfig::default(), &mut rng);
        let records = (0..4)
            .map(|i| {
                let x = DVector::from_fn(3, |r, _| (i + r) as f64 * 0.3 - 0.5);
                let u = policy.mean_action(&x).unwrap();
                ReflexRecord {
                    condition: 0,
                    timestep: i,
                    reflex: MotorReflex::zero(3, 2, 1.0),
                    state: x,
                    action: u,
                    cov_prev: DMatrix::identity(2, 2) * 0.5,
                }
            })
            .collect();
        let set = TrainingSet::new(&ReflexDataset { records }).unwrap();
        let beta = 2e-4;
        let (loss, _) = baseline_loss(&policy, &set, beta).unwrap();
        let l2 = beta * policy.net.squared_norm();
        assert!((loss - l2).abs() < 1e-12 * l2.max(1.0));
    }

    #[test]
    fn linearization_of_linear_network_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy: BaselinePolicy<f64> = BaselinePolicy::new(
            2,
            1,
            BaselineConfig {
                hidden_layers: 0,
                ..BaselineConfig::default()
            },
            &mut rng,
        );
        policy.net.layers_mut()[0].weights = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        policy.net.layers_mut()[0].bias[0] = 0.5;
        let r = policy.linearize(&DVector::from_vec(vec![0.3, 0.9])).unwrap();
        assert_eq!(r.gain, DMatrix::from_row_slice(1, 2, &[2.0, -1.0]));
        assert!((r.offset[0] - 0.5).abs() < 1e-15);
    }
}
