use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::envs::{Condition, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{BaselineConfig, GmrConfig, TrainConfig};
use crate::trajopt::{CStepOptions, CostSpec};

/// Overrides `seed` when set.
pub const SEED_ENV: &str = "GMR_SEED";
/// Overrides `output_dir` when set.
pub const OUT_ENV: &str = "GMR_OUT";

/// Success thresholds on final-state MSE. The looser one reads as "reached
/// the goal", the tighter one as "reached it precisely".
pub const THRESHOLD_LOOSE: f64 = 0.1;
pub const THRESHOLD_TIGHT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Gmr,
    Baseline,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gmr => "gmr",
            PolicyKind::Baseline => "baseline",
        }
    }

    pub fn other(self) -> Self {
        match self {
            PolicyKind::Gmr => PolicyKind::Baseline,
            PolicyKind::Baseline => PolicyKind::Gmr,
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmr" => Ok(PolicyKind::Gmr),
            "baseline" => Ok(PolicyKind::Baseline),
            other => Err(Error::InvalidArgument(format!("unknown policy kind {other:?}"))),
        }
    }
}

/// Which controller collects the exploration rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Always the local controllers.
    Local,
    /// Local controllers on odd iterations, the global policy on even ones.
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub state: f64,
    pub action: f64,
    pub terminal: f64,
}

impl CostWeights {
    pub fn spec(&self, goal: &[f64]) -> CostSpec<f64> {
        CostSpec {
            goal: DVector::from_column_slice(goal),
            state_weight: self.state,
            action_weight: self.action,
            terminal_weight: self.terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub iterations: usize,
    pub samples_per_condition: usize,
    /// Trajectory KL bound per C-step; `inf` disables it.
    pub epsilon: f64,
    pub policy: PolicyKind,
    pub success_threshold: f64,
    pub output_dir: PathBuf,
    pub sampler: Sampler,
    /// Variance of the initial zero-mean exploration controller.
    pub initial_variance: f64,
    pub dynamics_regularization: f64,
    /// Neighbouring timesteps pooled into each dynamics regression.
    pub dynamics_window: usize,
    /// Test-mode rollouts per condition for the learning-curve metrics.
    pub eval_rollouts: usize,
    pub robustness_trials: usize,
    pub env: EnvSpec,
    pub conditions: Vec<Condition>,
    pub cost: CostWeights,
    pub train: TrainConfig,
    pub gmr: GmrConfig,
    pub baseline: BaselineConfig,
    pub cstep: CStepOptions,
}

impl ExperimentConfig {
    /// Two-condition planar point-mass reaching task.
    pub fn point_mass() -> Self {
        let env = EnvSpec::point_mass();
        let var = vec![1e-4, 1e-4, 1e-6, 1e-6];
        let goal = vec![0.0; 4];
        Self {
            seed: 1,
            iterations: 10,
            samples_per_condition: 5,
            epsilon: 2.0,
            policy: PolicyKind::Gmr,
            success_threshold: THRESHOLD_LOOSE,
            output_dir: PathBuf::from("runs/point_mass"),
            sampler: Sampler::Local,
            initial_variance: 1.0,
            dynamics_regularization: crate::dynamics::DEFAULT_REGULARIZATION,
            dynamics_window: 2,
            eval_rollouts: 5,
            robustness_trials: 50,
            env,
            conditions: vec![
                Condition {
                    id: 0,
                    initial_mean: vec![0.8, 0.6, 0.0, 0.0],
                    initial_variance: var.clone(),
                    goal: goal.clone(),
                },
                Condition {
                    id: 1,
                    initial_mean: vec![-0.7, 0.5, 0.0, 0.0],
                    initial_variance: var,
                    goal,
                },
            ],
            cost: CostWeights {
                state: 1.0,
                action: 10.0,
                terminal: 1000.0,
            },
            train: TrainConfig::default(),
            gmr: GmrConfig::default(),
            baseline: BaselineConfig::default(),
            cstep: CStepOptions::default(),
        }
    }

    /// Two-condition two-link arm reaching task.
    pub fn two_link_arm() -> Self {
        let var = vec![1e-4, 1e-4, 1e-6, 1e-6];
        let goal = vec![1.0, 0.5, 0.0, 0.0];
        Self {
            env: EnvSpec::two_link_arm(),
            output_dir: PathBuf::from("runs/two_link_arm"),
            conditions: vec![
                Condition {
                    id: 0,
                    initial_mean: vec![0.0, 0.0, 0.0, 0.0],
                    initial_variance: var.clone(),
                    goal: goal.clone(),
                },
                Condition {
                    id: 1,
                    initial_mean: vec![-0.5, 1.2, 0.0, 0.0],
                    initial_variance: var,
                    goal,
                },
            ],
            ..Self::point_mass()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.samples_per_condition < 2 {
            return Err(Error::InvalidArgument("need at least 2 samples per condition".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be > 0".into()));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::InvalidArgument("success threshold must be > 0".into()));
        }
        if !(self.initial_variance > 0.0) {
            return Err(Error::InvalidArgument("initial variance must be > 0".into()));
        }
        if self.eval_rollouts == 0 || self.robustness_trials == 0 {
            return Err(Error::InvalidArgument("rollout counts must be >= 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::InvalidArgument("no conditions configured".into()));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidArgument(format!(
                    "condition ids must be 0..n in order; position {i} has id {}",
                    c.id
                )));
            }
            c.validate(&self.env)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("parsing {}", path.display())))
    }

    /// Applies `GMR_SEED` / `GMR_OUT` from the process environment.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        self.apply_overrides(std::env::var(SEED_ENV).ok(), std::env::var(OUT_ENV).ok())
    }

    pub fn apply_overrides(&mut self, seed: Option<String>, out: Option<String>) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={s:?} is not a u64")))?;
        }
        if let Some(o) = out {
            self.output_dir = PathBuf::from(o);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::point_mass().validate().unwrap();
        ExperimentConfig::two_link_arm().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let c = ExperimentConfig::point_mass();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn infinite_epsilon_survives_toml() {
        let mut c = ExperimentConfig::point_mass();
        c.epsilon = f64::INFINITY;
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert!(back.epsilon.is_infinite());
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = ExperimentConfig::point_mass();
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::point_mass();
        c.conditions[1].id = 5;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::point_mass();
        c.conditions[0].goal.pop();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::point_mass();
        c.apply_overrides(Some("42".into()), Some("/tmp/x".into())).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert!(c.apply_overrides(Some("abc".into()), None).is_err());
    }
}
