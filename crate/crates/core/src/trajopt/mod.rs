//! The C-step: quadratic cost, KL-penalised LQR backward pass, Gaussian
//! forward pass, and the dual loop that enforces the trajectory trust
//! region.

mod cost;
mod cstep;
mod kl;
mod lqr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cost::{expand_cost, expected_cost, CostSpec, CostStep, QuadraticCost};
pub use cstep::{adjust_dual, c_step, CStepOptions, CStepOutcome, DualState, DUAL_CAP, KL_TOLERANCE};
pub use kl::{reflex_kl, trajectory_kl};
pub use lqr::{
    build_dataset, forward_marginals, lqr_backward, lqr_forward, BackwardPass, QExpansion,
    ValueExpansion,
};

use crate::dynamics::GaussianState;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::scalar::Real;

/// Linear-Gaussian controller for one timestep: `u ~ N(K x + k, Σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorReflex<T: Real> {
    pub gain: DMatrix<T>,
    pub offset: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> MotorReflex<T> {
    pub fn new(gain: DMatrix<T>, offset: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let reflex = Self { gain, offset, cov };
        reflex.validate()?;
        Ok(reflex)
    }

    /// `K = 0`, `k = 0`, `Σ = variance · I`.
    pub fn zero(state_dim: usize, action_dim: usize, variance: T) -> Self {
        Self {
            gain: DMatrix::zeros(action_dim, state_dim),
            offset: DVector::zeros(action_dim),
            cov: DMatrix::identity(action_dim, action_dim) * variance,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.gain.nrows()
    }

    pub fn mean_action(&self, x: &DVector<T>) -> DVector<T> {
        &self.gain * x + &self.offset
    }

    /// Length of `[vec(K); k; vec(Σ)]` with `Σ` counted as a full matrix.
    pub fn parameter_count(state_dim: usize, action_dim: usize) -> usize {
        action_dim * state_dim + action_dim + action_dim * action_dim
    }

    /// `[vec(K); k; vec(Σ)]`, row-major.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(Self::parameter_count(self.state_dim(), self.action_dim()));
        for r in 0..self.gain.nrows() {
            out.extend(self.gain.row(r).iter().copied());
        }
        out.extend(self.offset.iter().copied());
        for r in 0..self.cov.nrows() {
            out.extend(self.cov.row(r).iter().copied());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let du = self.action_dim();
        check_dim("reflex offset", du, self.offset.len())?;
        check_dim("reflex covariance rows", du, self.cov.nrows())?;
        check_dim("reflex covariance cols", du, self.cov.ncols())?;
        if !self
            .gain
            .iter()
            .chain(self.offset.iter())
            .chain(self.cov.iter())
            .all(|v| v.finite())
        {
            return Err(Error::NonFinite("motor reflex".into()));
        }
        if (&self.cov - self.cov.transpose()).amax() > T::lit(1e-9) * (T::one() + self.cov.amax()) {
            return Err(Error::NotPositiveDefinite("reflex covariance not symmetric".into()));
        }
        if min_eigenvalue(&self.cov) <= T::zero() {
            return Err(Error::NotPositiveDefinite("reflex covariance".into()));
        }
        Ok(())
    }

    pub(crate) fn symmetrized(mut self) -> Self {
        self.cov = symmetrize(&self.cov);
        self
    }
}

/// Time-indexed linear-Gaussian controller with the state marginals of its
/// most recent forward pass (empty until one has run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPolicy<T: Real> {
    pub reflexes: Vec<MotorReflex<T>>,
    pub marginal_means: Vec<DVector<T>>,
    pub marginal_covs: Vec<DMatrix<T>>,
}

impl<T: Real> LocalPolicy<T> {
    pub fn from_reflexes(reflexes: Vec<MotorReflex<T>>) -> Self {
        Self {
            reflexes,
            marginal_means: Vec::new(),
            marginal_covs: Vec::new(),
        }
    }

    pub fn constant(reflex: MotorReflex<T>, horizon: usize) -> Self {
        Self::from_reflexes(vec![reflex; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.reflexes.len()
    }

    pub fn has_marginals(&self) -> bool {
        self.marginal_means.len() == self.reflexes.len() + 1
    }

    pub fn marginal(&self, t: usize) -> Option<GaussianState<T>> {
        Some(GaussianState {
            mean: self.marginal_means.get(t)?.clone(),
            cov: self.marginal_covs.get(t)?.clone(),
        })
    }

    pub fn set_marginals(&mut self, marginals: Vec<GaussianState<T>>) {
        self.marginal_means = marginals.iter().map(|m| m.mean.clone()).collect();
        self.marginal_covs = marginals.into_iter().map(|m| m.cov).collect();
    }
}

/// One supervised target for the S-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexRecord<T: Real> {
    pub condition: usize,
    pub timestep: usize,
    pub state: DVector<T>,
    pub reflex: MotorReflex<T>,
    /// `K x + k` of the local policy at `state`.
    pub action: DVector<T>,
    /// Covariance of the local policy the record was drawn from.
    pub cov_prev: DMatrix<T>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflexDataset<T: Real> {
    pub records: Vec<ReflexRecord<T>>,
}

impl<T: Real> ReflexDataset<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: ReflexDataset<T>) {
        self.records.extend(other.records);
    }

    pub fn pooled<'a>(sets: impl IntoIterator<Item = &'a ReflexDataset<T>>) -> Self {
        Self {
            records: sets.into_iter().flat_map(|s| s.records.iter().cloned()).collect(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.state.len())
    }

    pub fn action_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.action.len())
    }
}
