use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::baseline::{baseline_loss, BaselinePolicy};
use super::loss::{gmr_loss_with_noise, TrainingSet};
use super::{GmrPolicy, Mode};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::scalar::Real;
use crate::trajopt::ReflexDataset;

/// Weight of the parameter L2 penalty.
pub const DEFAULT_BETA: f64 = 0.0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the latent KL term.
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta: DEFAULT_BETA,
            epochs: 400,
            batch_size: 20,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Mini-batch Adam on the GMR loss over the pooled dataset. Returns the
/// mean batch loss of every epoch.
pub fn s_step<T: Real, R: Rng + ?Sized>(
    policy: &mut GmrPolicy<T>,
    dataset: &ReflexDataset<T>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    config.validate()?;
    let set = TrainingSet::new(dataset)?;
    let alpha = T::lit(config.alpha);
    let beta = T::lit(config.beta);
    let mut enc_opt = AdamState::new(&policy.encoder, config.adam);
    let mut dec_opt = AdamState::new(&policy.decoder, config.adam);
    let mut trans_opt = AdamState::new(&policy.translator, config.adam);
    let mode = policy.mode;
    policy.mode = Mode::Train;
    let l = policy.latent_dim();

    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut sum = T::zero();
        let parts = batches(set.len(), config.batch_size, rng);
        let count = T::from_usize(parts.len()).unwrap();
        for idx in parts {
            let batch = set.subset(&idx);
            let noise = nalgebra::DMatrix::from_fn(l, idx.len(), |_, _| T::standard_normal(rng));
            let (loss, grads) = gmr_loss_with_noise(policy, &batch, &noise, alpha, beta)?;
            enc_opt.step(&mut policy.encoder, &grads.encoder)?;
            dec_opt.step(&mut policy.decoder, &grads.decoder)?;
            trans_opt.step(&mut policy.translator, &grads.translator)?;
            sum += loss.total();
        }
        history.push(sum / count);
    }
    policy.mode = mode;
    Ok(history)
}

/// Trains the baseline network on the same datasets by precision-weighted
/// regression onto the local-policy actions.
pub fn baseline_s_step<T: Real, R: Rng + ?Sized>(
    policy: &mut BaselinePolicy<T>,
    dataset: &ReflexDataset<T>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    config.validate()?;
    let set = TrainingSet::new(dataset)?;
    let beta = T::lit(config.beta);
    let mut opt = AdamState::new(&policy.net, config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut sum = T::zero();
        let parts = batches(set.len(), config.batch_size, rng);
        let count = T::from_usize(parts.len()).unwrap();
        for idx in parts {
            let (loss, tape) = baseline_loss(policy, &set.subset(&idx), beta)?;
            opt.step(&mut policy.net, &tape)?;
            sum += loss;
        }
        history.push(sum / count);
    }
    Ok(history)
}

