use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LocalPolicy;
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Reaching cost `½ w_x ‖x − x_goal‖² + ½ w_u ‖u‖²` per step, plus a
/// terminal `½ w_T ‖x_T − x_goal‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec<T: Real> {
    pub goal: DVector<T>,
    pub state_weight: T,
    pub action_weight: T,
    pub terminal_weight: T,
}

/// `l(x, u) = ½ [x;u]ᵀ L [x;u] + [x;u]ᵀ l + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostStep<T: Real> {
    pub lxuxu: DMatrix<T>,
    pub lxu: DVector<T>,
    pub lconst: T,
}

impl<T: Real> CostStep<T> {
    pub fn evaluate(&self, xu: &DVector<T>) -> T {
        (xu.transpose() * &self.lxuxu * xu)[(0, 0)] * T::lit(0.5) + xu.dot(&self.lxu) + self.lconst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost<T: Real> {
    pub steps: Vec<CostStep<T>>,
    /// State-only terminal term, `d_x × d_x`.
    pub terminal_xx: DMatrix<T>,
    pub terminal_x: DVector<T>,
    pub terminal_const: T,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl<T: Real> QuadraticCost<T> {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn running(&self, t: usize, x: &DVector<T>, u: &DVector<T>) -> T {
        let xu = join(x, u);
        self.steps[t].evaluate(&xu)
    }

    pub fn terminal(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.terminal_xx * x)[(0, 0)] * T::lit(0.5)
            + x.dot(&self.terminal_x)
            + self.terminal_const
    }
}

pub(crate) fn join<T: Real>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let mut xu = DVector::zeros(x.len() + u.len());
    xu.rows_mut(0, x.len()).copy_from(x);
    xu.rows_mut(x.len(), u.len()).copy_from(u);
    xu
}

/// Exact quadratic form of the reaching cost over `horizon` steps.
pub fn expand_cost<T: Real>(
    spec: &CostSpec<T>,
    action_dim: usize,
    horizon: usize,
) -> Result<QuadraticCost<T>> {
    if spec.action_weight <= T::zero() {
        return Err(Error::InvalidArgument(
            "action weight must be positive to keep l_uu positive definite".into(),
        ));
    }
    if spec.state_weight < T::zero() || spec.terminal_weight < T::zero() {
        return Err(Error::InvalidArgument("state weights must be >= 0".into()));
    }
    let dx = spec.goal.len();
    let du = action_dim;
    let half = T::lit(0.5);
    let goal_sq = spec.goal.norm_squared();

    let mut lxuxu = DMatrix::zeros(dx + du, dx + du);
    for i in 0..dx {
        lxuxu[(i, i)] = spec.state_weight;
    }
    for i in dx..dx + du {
        lxuxu[(i, i)] = spec.action_weight;
    }
    let mut lxu = DVector::zeros(dx + du);
    lxu.rows_mut(0, dx).copy_from(&(&spec.goal * -spec.state_weight));
    let step = CostStep {
        lxuxu,
        lxu,
        lconst: half * spec.state_weight * goal_sq,
    };
    Ok(QuadraticCost {
        steps: vec![step; horizon],
        terminal_xx: DMatrix::identity(dx, dx) * spec.terminal_weight,
        terminal_x: &spec.goal * -spec.terminal_weight,
        terminal_const: half * spec.terminal_weight * goal_sq,
        state_dim: dx,
        action_dim: du,
    })
}

/// `J = Σ_t E[l(x_t, u_t)] + E[l_T(x_T)]` under the policy's Gaussian
/// state marginals.
pub fn expected_cost<T: Real>(cost: &QuadraticCost<T>, policy: &LocalPolicy<T>) -> Result<T> {
    if !policy.has_marginals() {
        return Err(Error::InvalidArgument("policy has no state marginals".into()));
    }
    check_dim("cost horizon", cost.horizon(), policy.horizon())?;
    let dx = cost.state_dim;
    let du = cost.action_dim;
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (t, reflex) in policy.reflexes.iter().enumerate() {
        let m = &policy.marginal_means[t];
        let s = &policy.marginal_covs[t];
        let u = reflex.mean_action(m);
        let mut joint = DMatrix::zeros(dx + du, dx + du);
        let ks = &reflex.gain * s;
        joint.view_mut((0, 0), (dx, dx)).copy_from(s);
        joint.view_mut((dx, 0), (du, dx)).copy_from(&ks);
        joint.view_mut((0, dx), (dx, du)).copy_from(&ks.transpose());
        joint
            .view_mut((dx, dx), (du, du))
            .copy_from(&(&ks * reflex.gain.transpose() + &reflex.cov));
        total += cost.running(t, m, &u) + half * (&cost.steps[t].lxuxu * joint).trace();
    }
    let t = policy.horizon();
    total += cost.terminal(&policy.marginal_means[t])
        + half * (&cost.terminal_xx * &policy.marginal_covs[t]).trace();
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_goal_unit_weights() {
        let spec = CostSpec {
            goal: DVector::zeros(2),
            state_weight: 1.0,
            action_weight: 1.0,
            terminal_weight: 1.0,
        };
        let c = expand_cost(&spec, 1, 3).unwrap();
        assert_eq!(c.steps[0].lxuxu, DMatrix::identity(3, 3));
        assert!(c.steps[0].lxu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_minimum_at_goal() {
        let spec = CostSpec {
            goal: DVector::from_element(1, 2.0),
            state_weight: 1.0,
            action_weight: 0.1,
            terminal_weight: 1.0,
        };
        let c = expand_cost::<f64>(&spec, 1, 1).unwrap();
        // ∇l = L z + l = 0  =>  z = −L⁻¹ l
        let step = &c.steps[0];
        let z = -step.lxuxu.clone().try_inverse().unwrap() * &step.lxu;
        assert!((z[0] - 2.0).abs() < 1e-14);
        assert!(z[1].abs() < 1e-14);
        let at_goal = c.running(0, &DVector::from_element(1, 2.0), &DVector::zeros(1));
        assert!(at_goal.abs() < 1e-14);
        // cost at the origin equals the constant term
        assert_eq!(step.evaluate(&DVector::zeros(2)), step.lconst);
    }

    #[test]
    fn nonpositive_action_weight_rejected() {
        let spec = CostSpec {
            goal: DVector::zeros(1),
            state_weight: 1.0,
            action_weight: 0.0,
            terminal_weight: 1.0,
        };
        assert!(expand_cost(&spec, 1, 1).is_err());
    }
}
