//! Desk-scale simulated plants: a planar point mass under force control, a
//! planar two-link arm under torque control, and a dimension-configurable
//! bank of double integrators used for shape tests.
//!
//! States are positions followed by velocities. Integration is
//! semi-implicit Euler; process noise is added to the velocity components.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{psd_sqrt, sample_gaussian};
use crate::policy::{BaselinePolicy, GmrPolicy};
use crate::trajopt::LocalPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    PointMass {
        mass: f64,
        damping: f64,
    },
    TwoLinkArm {
        masses: [f64; 2],
        lengths: [f64; 2],
        /// Viscous joint damping.
        damping: f64,
        gravity: f64,
    },
    /// `joints` independent unit-mass double integrators.
    Linear {
        joints: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub plant: Plant,
    pub dt: f64,
    pub horizon: usize,
    /// Std of the additive Gaussian noise on each velocity per step.
    pub noise_std: f64,
    /// Symmetric clamp applied to every action component.
    pub action_bound: f64,
    /// Integration substeps per control step.
    pub substeps: usize,
    /// Per-component `(low, high)` box for uniform initial states.
    pub state_bounds: Vec<(f64, f64)>,
}

impl EnvSpec {
    pub fn point_mass() -> Self {
        Self {
            plant: Plant::PointMass {
                mass: 1.0,
                damping: 0.1,
            },
            dt: 0.05,
            horizon: 80,
            noise_std: 1e-3,
            action_bound: 10.0,
            substeps: 1,
            state_bounds: vec![(-1.0, 1.0), (-1.0, 1.0), (-0.5, 0.5), (-0.5, 0.5)],
        }
    }

    pub fn two_link_arm() -> Self {
        Self {
            plant: Plant::TwoLinkArm {
                masses: [1.0, 1.0],
                lengths: [0.5, 0.5],
                damping: 0.05,
                gravity: 0.0,
            },
            dt: 0.05,
            horizon: 80,
            noise_std: 1e-3,
            action_bound: 10.0,
            substeps: 10,
            state_bounds: vec![
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-0.5, 0.5),
                (-0.5, 0.5),
            ],
        }
    }

    pub fn synthetic_linear(joints: usize) -> Self {
        let mut bounds = vec![(-1.0, 1.0); joints];
        bounds.extend(vec![(-0.5, 0.5); joints]);
        Self {
            plant: Plant::Linear { joints },
            dt: 0.05,
            horizon: 80,
            noise_std: 1e-3,
            action_bound: 10.0,
            substeps: 1,
            state_bounds: bounds,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.plant {
            Plant::PointMass { .. } | Plant::TwoLinkArm { .. } => 4,
            Plant::Linear { joints } => 2 * joints,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.plant {
            Plant::PointMass { .. } | Plant::TwoLinkArm { .. } => 2,
            Plant::Linear { joints } => joints,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be > 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise std must be >= 0".into()));
        }
        if !(self.action_bound > 0.0) || self.substeps == 0 {
            return Err(Error::InvalidArgument("action bound and substeps must be positive".into()));
        }
        check_dim("state bounds", self.state_dim(), self.state_bounds.len())?;
        Ok(())
    }

    /// Workspace position used for plotting: the point itself, the arm's
    /// end effector, or the first two joint positions.
    pub fn planar_position(&self, x: &DVector<f64>) -> (f64, f64) {
        match &self.plant {
            Plant::TwoLinkArm { lengths, .. } => {
                let (q1, q2) = (x[0], x[1]);
                (
                    lengths[0] * q1.cos() + lengths[1] * (q1 + q2).cos(),
                    lengths[0] * q1.sin() + lengths[1] * (q1 + q2).sin(),
                )
            }
            _ => (x[0], if x.len() > 2 { x[1] } else { 0.0 }),
        }
    }

    pub fn clamp_action(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|v| v.clamp(-self.action_bound, self.action_bound))
    }

    /// Advances the plant by one control step.
    pub fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        check_dim("env state", self.state_dim(), x.len())?;
        check_dim("env action", self.action_dim(), u.len())?;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let u = self.clamp_action(u);
        let n = self.state_dim() / 2;
        let h = self.dt / self.substeps as f64;
        let mut q = x.rows(0, n).into_owned();
        let mut v = x.rows(n, n).into_owned();
        for _ in 0..self.substeps {
            let acc = self.acceleration(&q, &v, &u)?;
            v += acc * h;
            q += &v * h;
        }
        if self.noise_std > 0.0 {
            for vi in v.iter_mut() {
                *vi += self.noise_std * <f64 as crate::scalar::Real>::standard_normal(rng);
            }
        }
        let mut next = DVector::zeros(2 * n);
        next.rows_mut(0, n).copy_from(&q);
        next.rows_mut(n, n).copy_from(&v);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("plant state".into()));
        }
        Ok(next)
    }

    fn acceleration(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.plant {
            Plant::PointMass { mass, damping } => Ok(u / *mass - v * *damping),
            Plant::Linear { .. } => Ok(u.clone()),
            Plant::TwoLinkArm {
                masses,
                lengths,
                damping,
                gravity,
            } => {
                let m = arm_inertia(masses, lengths, q[1]);
                let bias = arm_bias(masses, lengths, *gravity, q, v);
                let rhs = Vector2::new(u[0], u[1]) - bias - Vector2::new(v[0], v[1]) * *damping;
                let acc = m
                    .try_inverse()
                    .ok_or_else(|| Error::NonFinite("arm inertia inverse".into()))?
                    * rhs;
                Ok(DVector::from_column_slice(acc.as_slice()))
            }
        }
    }

    /// Kinetic plus potential energy (arm and point mass only).
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        match &self.plant {
            Plant::PointMass { mass, .. } => 0.5 * mass * (x[2] * x[2] + x[3] * x[3]),
            Plant::Linear { joints } => 0.5 * x.rows(*joints, *joints).norm_squared(),
            Plant::TwoLinkArm {
                masses,
                lengths,
                gravity,
                ..
            } => {
                let m = arm_inertia(masses, lengths, x[1]);
                let v = Vector2::new(x[2], x[3]);
                let kinetic = 0.5 * (v.transpose() * m * v)[(0, 0)];
                let (lc1, lc2) = (lengths[0] / 2.0, lengths[1] / 2.0);
                let potential = gravity
                    * (masses[0] * lc1 * x[0].sin()
                        + masses[1] * (lengths[0] * x[0].sin() + lc2 * (x[0] + x[1]).sin()));
                kinetic + potential
            }
        }
    }
}

/// Inertia matrix of two uniform rods.
fn arm_inertia(masses: &[f64; 2], lengths: &[f64; 2], q2: f64) -> Matrix2<f64> {
    let [m1, m2] = *masses;
    let [l1, l2] = *lengths;
    let (lc1, lc2) = (l1 / 2.0, l2 / 2.0);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    let c2 = q2.cos();
    let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let m22 = m2 * lc2 * lc2 + i2;
    Matrix2::new(m11, m12, m12, m22)
}

/// Coriolis/centrifugal plus gravity torques.
fn arm_bias(masses: &[f64; 2], lengths: &[f64; 2], g: f64, q: &DVector<f64>, v: &DVector<f64>) -> Vector2<f64> {
    let [m1, m2] = *masses;
    let [l1, l2] = *lengths;
    let (lc1, lc2) = (l1 / 2.0, l2 / 2.0);
    let h = m2 * l1 * lc2 * q[1].sin();
    let coriolis = Vector2::new(-h * (2.0 * v[0] * v[1] + v[1] * v[1]), h * v[0] * v[0]);
    let gravity = Vector2::new(
        (m1 * lc1 + m2 * l1) * g * q[0].cos() + m2 * lc2 * g * (q[0] + q[1]).cos(),
        m2 * lc2 * g * (q[0] + q[1]).cos(),
    );
    coriolis + gravity
}

/// Start/goal pair for one training condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: usize,
    pub initial_mean: Vec<f64>,
    /// Diagonal of the initial-state covariance.
    pub initial_variance: Vec<f64>,
    pub goal: Vec<f64>,
}

impl Condition {
    pub fn initial_mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.initial_mean)
    }

    pub fn initial_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.initial_variance))
    }

    pub fn goal(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.goal)
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        let dx = spec.state_dim();
        check_dim("condition initial mean", dx, self.initial_mean.len())?;
        check_dim("condition initial variance", dx, self.initial_variance.len())?;
        check_dim("condition goal", dx, self.goal.len())?;
        if self.initial_variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("initial variance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let factor = psd_sqrt(&self.initial_cov())?;
        Ok(sample_gaussian(&self.initial_mean(), &factor, rng))
    }
}

/// Anything that maps `(t, x)` to an action.
pub trait Controller {
    fn act(&self, t: usize, x: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>>;
}

/// Samples `u ~ N(K_t x + k_t, Σ_t)`.
impl Controller for LocalPolicy<f64> {
    fn act(&self, t: usize, x: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        let r = self.reflexes.get(t).ok_or(Error::TimestepOutOfRange {
            timestep: t,
            horizon: self.horizon(),
        })?;
        Ok(sample_gaussian(&r.mean_action(x), &psd_sqrt(&r.cov)?, rng))
    }
}

/// Runs a local policy with its mean action only.
pub struct MeanLocalPolicy<'a>(pub &'a LocalPolicy<f64>);

impl Controller for MeanLocalPolicy<'_> {
    fn act(&self, t: usize, x: &DVector<f64>, _rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        let r = self.0.reflexes.get(t).ok_or(Error::TimestepOutOfRange {
            timestep: t,
            horizon: self.0.horizon(),
        })?;
        Ok(r.mean_action(x))
    }
}

impl Controller for GmrPolicy<f64> {
    fn act(&self, _t: usize, x: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(self.forward(x, rng)?.action)
    }
}

impl Controller for BaselinePolicy<f64> {
    fn act(&self, _t: usize, x: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.act(x, rng)
    }
}

/// Wraps a closure as a controller.
pub struct FnController<F>(pub F);

impl<F> Controller for FnController<F>
where
    F: Fn(usize, &DVector<f64>) -> DVector<f64>,
{
    fn act(&self, t: usize, x: &DVector<f64>, _rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok((self.0)(t, x))
    }
}

/// Runs `controller` for the full horizon from `x0`. Recorded actions are
/// the clamped ones actually applied.
pub fn rollout_from<C: Controller + ?Sized, R: RngCore>(
    spec: &EnvSpec,
    controller: &C,
    x0: DVector<f64>,
    condition: usize,
    rng: &mut R,
) -> Result<Trajectory<f64>> {
    check_dim("initial state", spec.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(spec.horizon + 1);
    let mut actions = Vec::with_capacity(spec.horizon);
    let mut x = x0;
    for t in 0..spec.horizon {
        let u = spec.clamp_action(&controller.act(t, &x, rng)?);
        let next = spec.step(&x, &u, rng).map_err(|_| Error::Diverged { step: t })?;
        states.push(x);
        actions.push(u);
        x = next;
    }
    states.push(x);
    Trajectory::new(condition, states, actions)
}

/// Samples the initial state from `condition`, then runs [`rollout_from`].
pub fn rollout<C: Controller + ?Sized, R: RngCore>(
    spec: &EnvSpec,
    controller: &C,
    condition: &Condition,
    rng: &mut R,
) -> Result<Trajectory<f64>> {
    let x0 = condition.sample_initial(rng)?;
    rollout_from(spec, controller, x0, condition.id, rng)
}

/// Mean over state components of the squared terminal error.
pub fn final_state_mse(trajectory: &Trajectory<f64>, goal: &DVector<f64>) -> f64 {
    let x = trajectory.final_state();
    (x - goal).norm_squared() / x.len() as f64
}
