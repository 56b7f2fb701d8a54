use serde::{Deserialize, Serialize};

use super::{GradientTape, Network};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for one network.
#[derive(Debug, Clone)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    step: u64,
    first: GradientTape<T>,
    second: GradientTape<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: GradientTape::zeros_like(net),
            second: GradientTape::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to `net`.
    pub fn step(&mut self, net: &mut Network<T>, grads: &GradientTape<T>) -> Result<()> {
        if !grads.is_congruent(net) || !self.first.is_congruent(net) {
            return Err(Error::InvalidArgument(
                "gradient tape / optimizer state not congruent with network".into(),
            ));
        }
        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let one = T::one();
        let c1 = one - T::lit(self.config.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let c2 = one - T::lit(self.config.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = T::lit(self.config.learning_rate);
        let eps = T::lit(self.config.epsilon);

        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            for i in 0..gw.len() {
                update(&mut layer.weights[i], gw[i], &mut mw[i], &mut vw[i]);
            }
            for i in 0..gb.len() {
                update(&mut layer.bias[i], gb[i], &mut mb[i], &mut vb[i]);
            }
        }
        Ok(())
    }
}
