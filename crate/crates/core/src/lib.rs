//! Guided policy search with generative motor reflex (GMR) policies.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: dense networks, reverse-mode gradients, Adam.
//! * [`dynamics`]: per-timestep linear-Gaussian dynamics fitted from rollouts.
//! * [`trajopt`]: KL-constrained LQR (backward/forward passes, dual updates).
//! * [`policy`]: the GMR policy, its training loss and the baseline network.
//! * [`envs`]: point-mass and two-link-arm simulators.
//! * [`harness`]: the outer training loop, robustness evaluation and exports.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix it to `f64`.

pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod policy;
pub mod scalar;
pub mod trajopt;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Network = nn::Network<f64>;
pub type GradientTape = nn::GradientTape<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Trajectory = dynamics::Trajectory<f64>;
pub type LinearGaussianDynamics = dynamics::LinearGaussianDynamics<f64>;
pub type QuadraticCost = trajopt::QuadraticCost<f64>;
pub type MotorReflex = trajopt::MotorReflex<f64>;
pub type LocalPolicy = trajopt::LocalPolicy<f64>;
pub type ReflexDataset = trajopt::ReflexDataset<f64>;
pub type GmrPolicy = policy::GmrPolicy<f64>;
pub type BaselinePolicy = policy::BaselinePolicy<f64>;
