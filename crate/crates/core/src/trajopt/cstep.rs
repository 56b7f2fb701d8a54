use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cost::{expected_cost, QuadraticCost};
use super::kl::trajectory_kl;
use super::lqr::{build_dataset, forward_marginals, lqr_backward};
use super::{LocalPolicy, MotorReflex, ReflexDataset};
use crate::dynamics::{GaussianState, LinearGaussianDynamics};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative slack on the KL bound accepted as satisfied.
pub const KL_TOLERANCE: f64 = 0.1;
/// Largest dual value tried before giving up.
pub const DUAL_CAP: f64 = 1e16;

const STEP_UP: f64 = 10.0;
const STEP_DOWN: f64 = 5.0;

/// Per-timestep Lagrange multipliers for the trajectory KL bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState<T: Real> {
    pub lambda: Vec<T>,
    pub epsilon: T,
    /// Last measured `KL − ε`.
    pub violation: T,
}

impl<T: Real> DualState<T> {
    pub fn new(horizon: usize, initial: T, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument("epsilon must be > 0".into()));
        }
        if initial < T::zero() {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        Ok(Self {
            lambda: vec![initial; horizon],
            epsilon,
            violation: T::zero(),
        })
    }

    pub fn lambda_range(&self) -> (T, T) {
        let lo = self.lambda.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
        let hi = self.lambda.iter().copied().fold(T::zero(), |a, b| a.max(b));
        (lo, hi)
    }
}

/// Multiplicative dual update shared by all timesteps: ×10 when the bound
/// is violated, ÷5 when the KL is below half the bound, unchanged between.
pub fn adjust_dual<T: Real>(dual: &mut DualState<T>, measured_kl: T) {
    let eps = dual.epsilon;
    dual.violation = measured_kl - eps;
    if measured_kl > eps {
        for l in &mut dual.lambda {
            *l *= T::lit(STEP_UP);
        }
    } else if measured_kl < eps * T::lit(0.5) {
        for l in &mut dual.lambda {
            *l /= T::lit(STEP_DOWN);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CStepOptions {
    pub initial_lambda: f64,
    /// Below this the bound is treated as inactive.
    pub min_lambda: f64,
    pub max_adjustments: usize,
    /// Extra states drawn per timestep for the S-step dataset.
    pub samples_per_step: usize,
}

impl Default for CStepOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 0.01,
            min_lambda: 1e-8,
            max_adjustments: 40,
            samples_per_step: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CStepOutcome<T: Real> {
    pub policy: LocalPolicy<T>,
    pub dataset: ReflexDataset<T>,
    pub kl: T,
    pub dual: DualState<T>,
    pub expected_cost: T,
    /// Backward/forward passes run, including the accepted one.
    pub passes: usize,
}

struct Candidate<T: Real> {
    policy: LocalPolicy<T>,
    kl: T,
    lambda: T,
}

/// KL-constrained trajectory optimization against `reference`.
///
/// An infinite `epsilon` disables the bound (λ = 0, a single unconstrained
/// pass). Otherwise the dual is adjusted until `KL ∈ [ε/2, (1 + 0.1) ε]`,
/// the bound is inactive (λ below `min_lambda` with KL still under ε/2), or
/// the adjustment budget runs out, in which case the feasible pass with the
/// largest KL is returned.
#[allow(clippy::too_many_arguments)]
pub fn c_step<T: Real, R: Rng + ?Sized>(
    dynamics: &LinearGaussianDynamics<T>,
    cost: &QuadraticCost<T>,
    reference: &[MotorReflex<T>],
    initial: &GaussianState<T>,
    epsilon: T,
    condition: usize,
    options: &CStepOptions,
    rng: &mut R,
) -> Result<CStepOutcome<T>> {
    let horizon = dynamics.horizon();
    let unconstrained = !epsilon.finite() && epsilon > T::zero();
    let start = if unconstrained {
        T::zero()
    } else {
        T::lit(options.initial_lambda)
    };
    let mut dual = DualState::new(horizon, start, epsilon)?;
    let bound = epsilon * T::lit(1.0 + KL_TOLERANCE);
    let half = epsilon * T::lit(0.5);

    let run = |lambda: &[T]| -> Result<(LocalPolicy<T>, T)> {
        let pass = lqr_backward(dynamics, cost, Some(reference), lambda)?;
        let marginals = forward_marginals(dynamics, &pass.reflexes, initial)?;
        let mut policy = LocalPolicy::from_reflexes(pass.reflexes);
        policy.set_marginals(marginals);
        let kl = trajectory_kl(&policy, reference)?;
        Ok((policy, kl))
    };

    let mut passes = 0;
    let mut best: Option<Candidate<T>> = None;
    let accepted = loop {
        let (policy, kl) = run(&dual.lambda)?;
        passes += 1;
        let lambda = dual.lambda[0];
        if unconstrained {
            dual.violation = kl - epsilon;
            break Candidate { policy, kl, lambda };
        }
        if kl <= bound {
            if kl >= half || lambda <= T::lit(options.min_lambda) {
                dual.violation = kl - epsilon;
                break Candidate { policy, kl, lambda };
            }
            if best.as_ref().is_none_or(|b| kl > b.kl) {
                best = Some(Candidate { policy, kl, lambda });
            }
        }
        if passes >= options.max_adjustments {
            if let Some(b) = best.take() {
                dual.violation = b.kl - epsilon;
                break b;
            }
        }
        adjust_dual(&mut dual, kl);
        if dual.lambda[0] > T::lit(DUAL_CAP) {
            return Err(Error::DualDiverged {
                cap: DUAL_CAP,
                kl: kl.to_f64_lossy(),
                epsilon: epsilon.to_f64_lossy(),
            });
        }
    };

    for l in &mut dual.lambda {
        *l = accepted.lambda;
    }
    let dataset = build_dataset(&accepted.policy, condition, options.samples_per_step, rng)?;
    let expected_cost = expected_cost(cost, &accepted.policy)?;
    Ok(CStepOutcome {
        policy: accepted.policy,
        dataset,
        kl: accepted.kl,
        dual,
        expected_cost,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_leaves_lambda() {
        let mut d = DualState::new(3, 0.5, 2.0).unwrap();
        adjust_dual(&mut d, 2.0);
        assert_eq!(d.lambda, vec![0.5; 3]);
        adjust_dual(&mut d, 20.0);
        assert!(d.lambda.iter().all(|l| *l > 0.5));
        let before = d.lambda[0];
        adjust_dual(&mut d, 0.1);
        assert!(d.lambda[0] < before);
    }

    #[test]
    fn nonpositive_epsilon_rejected() {
        assert!(DualState::<f64>::new(2, 0.01, 0.0).is_err());
    }

    use crate::trajopt::cost::{expand_cost, CostSpec};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem() -> (LinearGaussianDynamics<f64>, QuadraticCost<f64>, Vec<MotorReflex<f64>>, GaussianState<f64>) {
        let horizon = 30;
        let dt = 0.05;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
        let dynamics = LinearGaussianDynamics::time_invariant(&a, &b, &DVector::zeros(2), &(DMatrix::identity(2, 2) * 1e-6), horizon);
        let spec = CostSpec {
            goal: DVector::zeros(2),
            state_weight: 1.0,
            action_weight: 0.01,
            terminal_weight: 100.0,
        };
        let cost = expand_cost(&spec, 1, horizon).unwrap();
        let reference = vec![MotorReflex::zero(2, 1, 1.0); horizon];
        let initial = GaussianState {
            mean: DVector::from_vec(vec![1.0, 0.0]),
            cov: DMatrix::identity(2, 2) * 1e-4,
        };
        (dynamics, cost, reference, initial)
    }

    fn run(epsilon: f64) -> CStepOutcome<f64> {
        let (d, c, r, x0) = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        c_step(&d, &c, &r, &x0, epsilon, 0, &CStepOptions::default(), &mut rng).unwrap()
    }

    #[test]
    fn infinite_epsilon_is_plain_lqr() {
        let (d, c, _, _) = problem();
        let out = run(f64::INFINITY);
        assert_eq!(out.passes, 1);
        assert!(out.dual.lambda.iter().all(|l| *l == 0.0));
        let plain = lqr_backward(&d, &c, None, &[0.0; 30]).unwrap();
        assert_eq!(out.policy.reflexes, plain.reflexes);
    }

    #[test]
    fn kl_bound_is_respected() {
        for eps in [0.5, 2.0, 10.0, 50.0] {
            let out = run(eps);
            assert!(out.kl <= eps * (1.0 + KL_TOLERANCE), "eps {eps}: kl {}", out.kl);
            assert!(out.passes <= 20, "eps {eps}: {} passes", out.passes);
        }
    }

    #[test]
    fn tiny_epsilon_stays_on_reference() {
        let (_, _, r, _) = problem();
        let out = run(1e-6);
        for (p, q) in out.policy.reflexes.iter().zip(&r) {
            assert!((&p.gain - &q.gain).amax() < 1e-3);
            assert!((&p.offset - &q.offset).amax() < 1e-3);
            assert!((&p.cov - &q.cov).amax() < 1e-3);
        }
    }

    #[test]
    fn larger_trust_region_never_costs_more() {
        let mut last = f64::INFINITY;
        for eps in [0.1, 1.0, 10.0, 100.0] {
            let out = run(eps);
            assert!(out.expected_cost <= last * (1.0 + 1e-9), "eps {eps}");
            last = out.expected_cost;
        }
    }

    #[test]
    fn dataset_comes_from_accepted_policy() {
        let out = run(5.0);
        assert_eq!(out.dataset.len(), 30 * 6);
        for rec in &out.dataset.records {
            assert_eq!(rec.reflex, out.policy.reflexes[rec.timestep]);
        }
    }
}

