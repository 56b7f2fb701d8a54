//! Time-varying linear-Gaussian dynamics `x_{t+1} ~ N(f_xu [x; u] + f_c, F)`
//! fitted by per-timestep ridge regression over sampled trajectories.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::symmetrize;
use crate::scalar::Real;

/// Diagonal floor added to every fitted `F_t`.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Default ridge strength for the regression.
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

/// One rollout: `T + 1` states and `T` actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T: Real> {
    pub condition: usize,
    pub states: Vec<DVector<T>>,
    pub actions: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(condition: usize, states: Vec<DVector<T>>, actions: Vec<DVector<T>>) -> Result<Self> {
        let traj = Self {
            condition,
            states,
            actions,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |u| u.len())
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("trajectory has states")
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("trajectory states", self.actions.len() + 1, self.states.len())?;
        let dx = self.state_dim();
        let du = self.action_dim();
        for x in &self.states {
            check_dim("trajectory state", dx, x.len())?;
            if !x.iter().all(|v| v.finite()) {
                return Err(Error::NonFinite("trajectory state".into()));
            }
        }
        for u in &self.actions {
            check_dim("trajectory action", du, u.len())?;
            if !u.iter().all(|v| v.finite()) {
                return Err(Error::NonFinite("trajectory action".into()));
            }
        }
        Ok(())
    }
}

/// Model for a single timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsStep<T: Real> {
    /// `d_x × (d_x + d_u)`, i.e. `[A B]`.
    pub fxu: DMatrix<T>,
    pub fc: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> DynamicsStep<T> {
    pub fn state_matrix(&self) -> DMatrix<T> {
        let dx = self.fc.len();
        self.fxu.columns(0, dx).into_owned()
    }

    pub fn action_matrix(&self) -> DMatrix<T> {
        let dx = self.fc.len();
        self.fxu.columns(dx, self.fxu.ncols() - dx).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianDynamics<T: Real> {
    pub steps: Vec<DynamicsStep<T>>,
    pub state_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> LinearGaussianDynamics<T> {
    /// Same `A`, `B`, `c`, `F` at every timestep.
    pub fn time_invariant(
        a: &DMatrix<T>,
        b: &DMatrix<T>,
        c: &DVector<T>,
        cov: &DMatrix<T>,
        horizon: usize,
    ) -> Self {
        let dx = a.nrows();
        let du = b.ncols();
        let mut fxu = DMatrix::zeros(dx, dx + du);
        fxu.columns_mut(0, dx).copy_from(a);
        fxu.columns_mut(dx, du).copy_from(b);
        let step = DynamicsStep {
            fxu,
            fc: c.clone(),
            cov: cov.clone(),
        };
        Self {
            steps: vec![step; horizon],
            state_dim: dx,
            action_dim: du,
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn predict(&self, t: usize, x: &DVector<T>, u: &DVector<T>) -> Result<GaussianState<T>> {
        let step = self.steps.get(t).ok_or(Error::TimestepOutOfRange {
            timestep: t,
            horizon: self.horizon(),
        })?;
        check_dim("predict state", self.state_dim, x.len())?;
        check_dim("predict action", self.action_dim, u.len())?;
        let mean = step.state_matrix() * x + step.action_matrix() * u + &step.fc;
        Ok(GaussianState {
            mean,
            cov: step.cov.clone(),
        })
    }
}

/// Fits one linear-Gaussian model per timestep from `samples`.
///
/// `regularization` is the ridge strength on the linear part (the intercept
/// is never penalized) and is also added to the diagonal of every `F_t`.
pub fn fit_dynamics<T: Real>(
    samples: &[Trajectory<T>],
    regularization: T,
) -> Result<LinearGaussianDynamics<T>> {
    fit_dynamics_windowed(samples, regularization, 0)
}

/// Like [`fit_dynamics`], but the regression at `t` also uses transitions
/// from timesteps `t - window ..= t + window`.
pub fn fit_dynamics_windowed<T: Real>(
    samples: &[Trajectory<T>],
    regularization: T,
    window: usize,
) -> Result<LinearGaussianDynamics<T>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trajectories to fit dynamics, got {}",
            samples.len()
        )));
    }
    if regularization < T::zero() || !regularization.finite() {
        return Err(Error::InvalidArgument("regularization must be >= 0".into()));
    }
    let horizon = samples[0].horizon();
    let dx = samples[0].state_dim();
    let du = samples[0].action_dim();
    if horizon == 0 {
        return Err(Error::InvalidArgument("trajectories have zero horizon".into()));
    }
    for s in samples {
        s.validate()?;
        check_dim("sample horizon", horizon, s.horizon())?;
        check_dim("sample state dim", dx, s.state_dim())?;
        check_dim("sample action dim", du, s.action_dim())?;
    }
    let p = dx + du;

    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(horizon - 1);
        let n = samples.len() * (hi - lo + 1);
        let nt = T::from_usize(n).unwrap();

        let mut z = DMatrix::zeros(n, p);
        let mut y = DMatrix::zeros(n, dx);
        let mut row = 0;
        for s in samples {
            for tau in lo..=hi {
                z.view_mut((row, 0), (1, dx)).copy_from(&s.states[tau].transpose());
                z.view_mut((row, dx), (1, du)).copy_from(&s.actions[tau].transpose());
                y.row_mut(row).copy_from(&s.states[tau + 1].transpose());
                row += 1;
            }
        }
        let z_mean = z.row_mean();
        let y_mean = y.row_mean();
        for mut r in z.row_iter_mut() {
            r -= &z_mean;
        }
        for mut r in y.row_iter_mut() {
            r -= &y_mean;
        }

        let mut gram = z.transpose() * &z;
        for i in 0..p {
            gram[(i, i)] += regularization;
        }
        let rhs = z.transpose() * &y;
        let chol = nalgebra::Cholesky::new(symmetrize(&gram));
        let chol = match chol {
            Some(c) => c,
            None => return Err(Error::RankDeficient { timestep: t }),
        };
        if regularization == T::zero() {
            let l = chol.l_dirty();
            let max_diag = (0..p).map(|i| gram[(i, i)]).fold(T::zero(), |a, b| a.max(b));
            let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(max_diag, |a, b| a.min(b));
            if min_pivot <= max_diag * T::lit(1e-12) {
                return Err(Error::RankDeficient { timestep: t });
            }
        }
        let theta = chol.solve(&rhs); // p × dx
        let fxu = theta.transpose();
        let fc = (y_mean - z_mean * &theta).transpose();

        let resid = &y - &z * &theta;
        let mut cov = resid.transpose() * &resid / nt;
        let floor = regularization + T::lit(COVARIANCE_FLOOR);
        for i in 0..dx {
            cov[(i, i)] += floor;
        }
        steps.push(DynamicsStep {
            fxu,
            fc,
            cov: symmetrize(&cov),
        });
    }
    Ok(LinearGaussianDynamics {
        steps,
        state_dim: dx,
        action_dim: du,
    })
}

/// Writes trajectories as CSV with columns
/// `condition,sample,t,x0..x{dx-1},u0..u{du-1}`. The final row of each
/// trajectory (t = T) leaves the action columns empty.
pub fn write_trajectory_log<W: Write>(trajectories: &[Trajectory<f64>], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let dx = trajectories.first().map_or(0, |t| t.state_dim());
    let du = trajectories.first().map_or(0, |t| t.action_dim());
    let mut header = vec!["condition".to_string(), "sample".into(), "t".into()];
    header.extend((0..dx).map(|i| format!("x{i}")));
    header.extend((0..du).map(|i| format!("u{i}")));
    wtr.write_record(&header)?;
    for (sample, traj) in trajectories.iter().enumerate() {
        for (t, x) in traj.states.iter().enumerate() {
            let mut rec = vec![traj.condition.to_string(), sample.to_string(), t.to_string()];
            rec.extend(x.iter().map(|v| format!("{v:?}")));
            match traj.actions.get(t) {
                Some(u) => rec.extend(u.iter().map(|v| format!("{v:?}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), du)),
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trajectory_log<R: Read>(input: R) -> Result<Vec<Trajectory<f64>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let dx = headers.iter().filter(|h| h.starts_with('x')).count();
    let du = headers.iter().filter(|h| h.starts_with('u')).count();
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad number `{s}` in trajectory log")))
    };
    let mut out: Vec<Trajectory<f64>> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let condition: usize = rec[0].parse().map_err(|_| Error::Format("condition".into()))?;
        let sample: usize = rec[1].parse().map_err(|_| Error::Format("sample".into()))?;
        if current != Some((condition, sample)) {
            out.push(Trajectory {
                condition,
                states: Vec::new(),
                actions: Vec::new(),
            });
            current = Some((condition, sample));
        }
        let traj = out.last_mut().unwrap();
        let x: Vec<f64> = (0..dx).map(|i| parse(&rec[3 + i])).collect::<Result<_>>()?;
        traj.states.push(DVector::from_vec(x));
        if du > 0 && !rec[3 + dx].is_empty() {
            let u: Vec<f64> = (0..du).map(|i| parse(&rec[3 + dx + i])).collect::<Result<_>>()?;
            traj.actions.push(DVector::from_vec(u));
        }
    }
    for t in &out {
        t.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_samples(n: usize, horizon: usize) -> Vec<Trajectory<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|_| {
                let x0 = DVector::from_fn(2, |_, _| f64::standard_normal(&mut rng));
                let states = vec![x0; horizon + 1];
                let actions = (0..horizon)
                    .map(|_| DVector::from_fn(1, |_, _| f64::standard_normal(&mut rng)))
                    .collect();
                Trajectory::new(0, states, actions).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_dynamics_recovered() {
        let samples = identity_samples(12, 3);
        let dyn_ = fit_dynamics(&samples, 0.0).unwrap();
        for step in &dyn_.steps {
            let expected = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
            assert!((&step.fxu - expected).norm() < 1e-10);
            assert!(step.fc.norm() < 1e-10);
        }
        let pred = dyn_
            .predict(0, &DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![7.0]))
            .unwrap();
        assert!((pred.mean - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-9);
        assert_eq!(pred.cov, dyn_.steps[0].cov);
    }

    #[test]
    fn scalar_doubling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<_> = (0..6)
            .map(|_| {
                let x0 = f64::standard_normal(&mut rng);
                let states = vec![DVector::from_element(1, x0), DVector::from_element(1, 2.0 * x0)];
                let u = DVector::from_element(1, f64::standard_normal(&mut rng));
                Trajectory::new(0, states, vec![u]).unwrap()
            })
            .collect();
        let d = fit_dynamics(&samples, 0.0).unwrap();
        let p = d
            .predict(0, &DVector::from_element(1, 3.0), &DVector::from_element(1, 0.4))
            .unwrap();
        assert!((p.mean[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_without_ridge_errors() {
        let samples = identity_samples(2, 2);
        assert!(matches!(
            fit_dynamics(&samples, 0.0),
            Err(Error::RankDeficient { .. })
        ));
        let fitted = fit_dynamics(&samples, 1e-3).unwrap();
        assert!(crate::linalg::min_eigenvalue(&fitted.steps[0].cov) >= 1e-3);
    }

    #[test]
    fn too_few_samples() {
        let samples = identity_samples(1, 2);
        assert!(fit_dynamics(&samples, 1e-6).is_err());
    }

    #[test]
    fn out_of_range_predict() {
        let d = fit_dynamics(&identity_samples(10, 2), 1e-6).unwrap();
        assert!(matches!(
            d.predict(2, &DVector::zeros(2), &DVector::zeros(1)),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn log_roundtrip() {
        let samples = identity_samples(3, 4);
        let mut buf = Vec::new();
        write_trajectory_log(&samples, &mut buf).unwrap();
        let back = read_trajectory_log(buf.as_slice()).unwrap();
        assert_eq!(samples, back);
    }
}
