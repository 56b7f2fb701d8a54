//! Generative motor reflex policy and the baseline state-action network.
//!
//! A GMR policy encodes the state into a latent Gaussian, samples (train)
//! or takes the mean (test), and translates the latent into the parameters
//! of a linear-Gaussian motor reflex `u ~ N(K x + k, Σ)` that is then
//! applied to the original state.

mod baseline;
pub mod checkpoint;
mod loss;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_loss, BaselineConfig, BaselinePolicy};
pub use loss::{
    gmr_loss, gmr_loss_with_noise, latent_kl, reflex_kl_direct, reflex_kl_loss, GmrGradients,
    GmrLossBreakdown, ReflexKl, TrainingSet,
};
pub use train::{baseline_s_step, s_step, TrainConfig, DEFAULT_BETA};

use crate::error::{check_dim, Error, Result};
use crate::linalg::sample_gaussian;
use crate::nn::{Activation, Network};
use crate::scalar::{softplus, Real};
use crate::trajopt::MotorReflex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Latent sampled, action sampled from the reflex.
    Train,
    /// Latent set to its mean, action is the reflex mean.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmrConfig {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub translator_hidden: usize,
    /// Added to the encoder's standard deviation.
    pub sigma_floor: f64,
    /// Diagonal added to `L Lᵀ` when building the reflex covariance.
    pub cov_jitter: f64,
}

impl Default for GmrConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            encoder_hidden: 64,
            decoder_hidden: 64,
            translator_hidden: 128,
            sigma_floor: 1e-4,
            cov_jitter: 1e-6,
        }
    }
}

/// Number of translator outputs: `K`, `k`, and the lower-triangular
/// covariance factor.
pub fn reflex_output_dim(state_dim: usize, action_dim: usize) -> usize {
    action_dim * state_dim + action_dim + action_dim * (action_dim + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrPolicy<T: Real> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
    pub translator: Network<T>,
    pub config: GmrConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrOutput<T: Real> {
    pub z: DVector<T>,
    pub reconstruction: DVector<T>,
    pub reflex: MotorReflex<T>,
    pub action: DVector<T>,
}

/// Translator output split into reflex parts.
#[derive(Debug, Clone)]
pub(crate) struct DecodedReflex<T: Real> {
    pub gain: DMatrix<T>,
    pub offset: DVector<T>,
    /// Lower-triangular factor after the softplus on the diagonal.
    pub factor: DMatrix<T>,
    pub cov: DMatrix<T>,
}

pub(crate) fn decode_reflex<T: Real>(
    params: &[T],
    state_dim: usize,
    action_dim: usize,
    jitter: T,
) -> DecodedReflex<T> {
    let (dx, du) = (state_dim, action_dim);
    let gain = DMatrix::from_row_slice(du, dx, &params[..du * dx]);
    let offset = DVector::from_column_slice(&params[du * dx..du * dx + du]);
    let mut factor = DMatrix::zeros(du, du);
    let mut idx = du * dx + du;
    for r in 0..du {
        for c in 0..=r {
            factor[(r, c)] = if r == c {
                softplus(params[idx])
            } else {
                params[idx]
            };
            idx += 1;
        }
    }
    let mut cov = &factor * factor.transpose();
    for i in 0..du {
        cov[(i, i)] += jitter;
    }
    let cov = crate::linalg::symmetrize(&cov);
    DecodedReflex {
        gain,
        offset,
        factor,
        cov,
    }
}

impl<T: Real> GmrPolicy<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: GmrConfig,
        rng: &mut R,
    ) -> Self {
        let l = config.latent_dim;
        let hidden = Activation::LeakyRelu;
        let out = Activation::Identity;
        let encoder = Network::init(&[state_dim, config.encoder_hidden, 2 * l], hidden, out, rng);
        let decoder = Network::init(&[l, config.decoder_hidden, state_dim], hidden, out, rng);
        let translator = Network::init(
            &[l, config.translator_hidden, reflex_output_dim(state_dim, action_dim)],
            hidden,
            out,
            rng,
        );
        Self {
            encoder,
            decoder,
            translator,
            config,
            state_dim,
            action_dim,
            mode: Mode::Test,
        }
    }

    /// Checks that the three networks chain together.
    pub fn from_parts(
        encoder: Network<T>,
        decoder: Network<T>,
        translator: Network<T>,
        config: GmrConfig,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let l = config.latent_dim;
        check_dim("encoder input", state_dim, encoder.input_dim())?;
        check_dim("encoder output", 2 * l, encoder.output_dim())?;
        check_dim("decoder input", l, decoder.input_dim())?;
        check_dim("decoder output", state_dim, decoder.output_dim())?;
        check_dim("translator input", l, translator.input_dim())?;
        check_dim(
            "translator output",
            reflex_output_dim(state_dim, action_dim),
            translator.output_dim(),
        )?;
        Ok(Self {
            encoder,
            decoder,
            translator,
            config,
            state_dim,
            action_dim,
            mode: Mode::Test,
        })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn squared_norm(&self) -> T {
        self.encoder.squared_norm() + self.decoder.squared_norm() + self.translator.squared_norm()
    }

    /// Latent mean and standard deviation for `x`.
    pub fn encode(&self, x: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
        check_dim("gmr state", self.state_dim, x.len())?;
        let out = self.encoder.forward(x)?;
        ensure_finite(out.as_slice(), "encoder")?;
        let l = self.latent_dim();
        let mu = out.rows(0, l).into_owned();
        let floor = T::lit(self.config.sigma_floor);
        let sigma = out.rows(l, l).map(|lv| (lv * T::lit(0.5)).exp() + floor);
        Ok((mu, sigma))
    }

    /// Motor reflex generated for latent `z`.
    pub fn translate(&self, z: &DVector<T>) -> Result<MotorReflex<T>> {
        let params = self.translator.forward(z)?;
        ensure_finite(params.as_slice(), "translator")?;
        let d = decode_reflex(
            params.as_slice(),
            self.state_dim,
            self.action_dim,
            T::lit(self.config.cov_jitter),
        );
        Ok(MotorReflex {
            gain: d.gain,
            offset: d.offset,
            cov: d.cov,
        })
    }

    /// Reflex the policy produces at `x` with the latent at its mean.
    pub fn reflex_at(&self, x: &DVector<T>) -> Result<MotorReflex<T>> {
        let (mu, _) = self.encode(x)?;
        self.translate(&mu)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &DVector<T>, rng: &mut R) -> Result<GmrOutput<T>> {
        let (mu, sigma) = self.encode(x)?;
        let z = match self.mode {
            Mode::Test => mu,
            Mode::Train => {
                let eta = DVector::from_fn(mu.len(), |_, _| T::standard_normal(rng));
                mu + sigma.component_mul(&eta)
            }
        };
        let reconstruction = self.decoder.forward(&z)?;
        ensure_finite(reconstruction.as_slice(), "decoder")?;
        let reflex = self.translate(&z)?;
        let mean = reflex.mean_action(x);
        let action = match self.mode {
            Mode::Test => mean,
            Mode::Train => {
                let factor = crate::linalg::psd_sqrt(&reflex.cov)?;
                sample_gaussian(&mean, &factor, rng)
            }
        };
        Ok(GmrOutput {
            z,
            reconstruction,
            reflex,
            action,
        })
    }
}

fn ensure_finite<T: Real>(values: &[T], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{layer} output")))
    }
}
