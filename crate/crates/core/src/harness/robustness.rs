use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyKind, THRESHOLD_LOOSE, THRESHOLD_TIGHT};
use super::run::{run_gps_with_shadow, stream, RunResult, Stream, TrainedPolicy};
use crate::envs::{final_state_mse, rollout_from, Controller, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub initial_state: Vec<f64>,
    /// `None` when the rollout diverged.
    pub final_mse: Option<f64>,
    pub success: bool,
    /// Planar position at every step, `T + 1` points.
    pub path: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub policy: PolicyKind,
    pub threshold: f64,
    pub seed: u64,
    pub successes: usize,
    pub total: usize,
    pub trials: Vec<TrialResult>,
}

impl RobustnessReport {
    /// Successes had the threshold been `threshold`.
    pub fn successes_at(&self, threshold: f64) -> usize {
        self.trials
            .iter()
            .filter(|t| t.final_mse.is_some_and(|m| m < threshold))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.successes > self.total || self.trials.len() != self.total {
            return Err(Error::Format("inconsistent trial counts".into()));
        }
        if self.successes_at(self.threshold) != self.successes
            || self
                .trials
                .iter()
                .any(|t| t.success != t.final_mse.is_some_and(|m| m < self.threshold))
        {
            return Err(Error::Format("success flags disagree with threshold".into()));
        }
        Ok(())
    }
}

/// Uniform draw from the per-component state box.
pub fn uniform_state<R: Rng + ?Sized>(env: &EnvSpec, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(
        env.state_bounds.len(),
        env.state_bounds.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)),
    )
}

/// Runs `n_trials` rollouts from uniform-random initial states. Divergent
/// rollouts count as failures.
pub fn evaluate_robustness<C: Controller + ?Sized>(
    controller: &C,
    kind: PolicyKind,
    env: &EnvSpec,
    goal: &DVector<f64>,
    n_trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<RobustnessReport> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let mut rng = stream(seed, Stream::Robustness, 0, trial as u64);
        let x0 = uniform_state(env, &mut rng);
        let initial_state = x0.as_slice().to_vec();
        let (final_mse, path) = match rollout_from(env, controller, x0, 0, &mut rng) {
            Ok(tr) => {
                let mse = final_state_mse(&tr, goal);
                let path = tr
                    .states
                    .iter()
                    .map(|x| {
                        let (px, py) = env.planar_position(x);
                        [px, py]
                    })
                    .collect();
                (mse.is_finite().then_some(mse), path)
            }
            Err(_) => (None, Vec::new()),
        };
        trials.push(TrialResult {
            trial,
            initial_state,
            success: final_mse.is_some_and(|m| m < threshold),
            final_mse,
            path,
        });
    }
    let successes = trials.iter().filter(|t| t.success).count();
    Ok(RobustnessReport {
        policy: kind,
        threshold,
        seed,
        successes,
        total: n_trials,
        trials,
    })
}

/// Robustness of a trained policy against the first condition's goal.
pub fn evaluate_trained(
    policy: &mut TrainedPolicy,
    config: &ExperimentConfig,
    n_trials: usize,
    threshold: f64,
) -> Result<RobustnessReport> {
    policy.set_mode(Mode::Test);
    let goal = config.conditions[0].goal();
    evaluate_robustness(&*policy, policy.kind(), &config.env, &goal, n_trials, config.seed, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub gmr_successes: usize,
    pub baseline_successes: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub seed: u64,
    pub exploration_sha256: String,
    pub gmr_dataset_sha256: String,
    pub baseline_dataset_sha256: String,
    /// Both policies were trained on byte-identical datasets.
    pub identical_training_data: bool,
    pub rows: Vec<ThresholdRow>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub run: RunResult,
    pub gmr: RobustnessReport,
    pub baseline: RobustnessReport,
    pub summary: ComparisonSummary,
}

/// Trains a GMR and a baseline policy on identical data from one GPS run
/// (the configured policy drives the C-steps) and evaluates both from the
/// same random initial states.
pub fn compare_policies(config: &ExperimentConfig) -> Result<Comparison> {
    let mut run = run_gps_with_shadow(config, Some(config.policy.other()))?;
    let mut shadow = run
        .shadow
        .take()
        .ok_or_else(|| Error::InvalidArgument("comparison run lost its second policy".into()))?;
    let lead = evaluate_trained(&mut run.policy, config, config.robustness_trials, config.success_threshold)?;
    let other = evaluate_trained(&mut shadow, config, config.robustness_trials, config.success_threshold)?;
    run.shadow = Some(shadow);
    let (gmr, baseline) = match config.policy {
        PolicyKind::Gmr => (lead, other),
        PolicyKind::Baseline => (other, lead),
    };
    let hash_of = |kind: PolicyKind| {
        run.dataset_sha256
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, h)| h.clone())
            .unwrap_or_default()
    };
    let gmr_hash = hash_of(PolicyKind::Gmr);
    let baseline_hash = hash_of(PolicyKind::Baseline);
    let identical = !gmr_hash.is_empty() && gmr_hash == baseline_hash;
    if !identical {
        return Err(Error::InvalidArgument(
            "policies in a comparison were trained on different data".into(),
        ));
    }
    let mut thresholds = vec![config.success_threshold, THRESHOLD_LOOSE, THRESHOLD_TIGHT];
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rows = thresholds
        .into_iter()
        .map(|threshold| ThresholdRow {
            threshold,
            gmr_successes: gmr.successes_at(threshold),
            baseline_successes: baseline.successes_at(threshold),
            total: gmr.total,
        })
        .collect();
    let summary = ComparisonSummary {
        seed: config.seed,
        exploration_sha256: run.exploration_sha256.clone(),
        gmr_dataset_sha256: gmr_hash,
        baseline_dataset_sha256: baseline_hash,
        identical_training_data: identical,
        rows,
    };
    Ok(Comparison {
        run,
        gmr,
        baseline,
        summary,
    })
}
