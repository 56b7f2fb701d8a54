use std::path::Path;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, PolicyKind, Sampler};
use crate::dynamics::{fit_dynamics_windowed, GaussianState, Trajectory};
use crate::envs::{final_state_mse, Condition, rollout, rollout_from, Controller, MeanLocalPolicy};
use crate::error::{Error, Result};
use crate::policy::checkpoint::{load_baseline, load_gmr, read_manifest, save_baseline, save_gmr, PolicyManifest};
use crate::policy::{baseline_s_step, s_step, BaselinePolicy, GmrPolicy, Mode};
use crate::trajopt::{c_step, expand_cost, LocalPolicy, MotorReflex, ReflexDataset};

/// Purpose tags for independent random streams.
#[derive(Clone, Copy)]
pub(crate) enum Stream {
    Init = 1,
    Sample = 2,
    CStep = 3,
    Train = 4,
    Eval = 5,
    Robustness = 6,
}

/// Random stream for `(purpose, a, b)` under `seed`. Streams never overlap,
/// so adding draws in one place leaves every other stream untouched.
pub(crate) fn stream(seed: u64, purpose: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) | ((a & 0xff_ffff) << 32) | (b & 0xffff_ffff));
    rng
}

/// A trained global policy of either kind.
#[derive(Debug, Clone)]
pub enum TrainedPolicy {
    Gmr(GmrPolicy<f64>),
    Baseline(BaselinePolicy<f64>),
}

impl TrainedPolicy {
    pub fn new(kind: PolicyKind, config: &ExperimentConfig, rng: &mut impl rand::Rng) -> Self {
        let dx = config.env.state_dim();
        let du = config.env.action_dim();
        match kind {
            PolicyKind::Gmr => TrainedPolicy::Gmr(GmrPolicy::new(dx, du, config.gmr, rng)),
            PolicyKind::Baseline => {
                TrainedPolicy::Baseline(BaselinePolicy::new(dx, du, config.baseline, rng))
            }
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            TrainedPolicy::Gmr(_) => PolicyKind::Gmr,
            TrainedPolicy::Baseline(_) => PolicyKind::Baseline,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        match self {
            TrainedPolicy::Gmr(p) => p.mode = mode,
            TrainedPolicy::Baseline(p) => p.mode = mode,
        }
    }

    /// Linear-Gaussian controller the policy acts like near `x`.
    pub fn linearize(&self, x: &DVector<f64>) -> Result<MotorReflex<f64>> {
        match self {
            TrainedPolicy::Gmr(p) => p.reflex_at(x),
            TrainedPolicy::Baseline(p) => p.linearize(x),
        }
    }

    pub fn s_step(
        &mut self,
        dataset: &ReflexDataset<f64>,
        config: &ExperimentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        match self {
            TrainedPolicy::Gmr(p) => s_step(p, dataset, &config.train, rng),
            TrainedPolicy::Baseline(p) => baseline_s_step(p, dataset, &config.train, rng),
        }
    }

    pub fn save(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        match self {
            TrainedPolicy::Gmr(p) => save_gmr(p, config.train.alpha, config.train.beta, dir),
            TrainedPolicy::Baseline(p) => save_baseline(p, config.train.beta, dir),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(match read_manifest(dir)? {
            PolicyManifest::Gmr { .. } => TrainedPolicy::Gmr(load_gmr(dir)?),
            PolicyManifest::Baseline { .. } => TrainedPolicy::Baseline(load_baseline(dir)?),
        })
    }
}

impl Controller for TrainedPolicy {
    fn act(&self, t: usize, x: &DVector<f64>, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        match self {
            TrainedPolicy::Gmr(p) => p.act(t, x, rng),
            TrainedPolicy::Baseline(p) => Controller::act(p, t, x, rng),
        }
    }
}

/// One row of the learning-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<MetricRow>,
}

impl Metrics {
    pub fn push(&mut self, iteration: usize, metric: impl Into<String>, value: f64) {
        self.rows.push(MetricRow {
            iteration,
            metric: metric.into(),
            value,
        });
    }

    /// Values of `metric` in iteration order.
    pub fn series(&self, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Metric names in first-appearance order.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.metric) {
                out.push(r.metric.clone());
            }
        }
        out
    }
}

/// Diagnostics of one C-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CStepDiagnostic {
    pub iteration: usize,
    pub condition: usize,
    /// `None` when the bound was disabled.
    pub epsilon: Option<f64>,
    pub kl: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub expected_cost: f64,
    pub passes: usize,
    pub dataset_size: usize,
}

/// Everything a GPS run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub policy: TrainedPolicy,
    /// Second policy trained on exactly the same datasets, if requested.
    pub shadow: Option<TrainedPolicy>,
    pub local_policies: Vec<LocalPolicy<f64>>,
    pub metrics: Metrics,
    pub diagnostics: Vec<CStepDiagnostic>,
    /// Per iteration, per policy kind, mean loss of each epoch.
    pub losses: Vec<(usize, PolicyKind, Vec<f64>)>,
    /// All exploration rollouts in collection order.
    pub exploration: Vec<Trajectory<f64>>,
    /// SHA-256 of the exploration rollouts.
    pub exploration_sha256: String,
    /// SHA-256 of the S-step datasets each policy was trained on.
    pub dataset_sha256: Vec<(PolicyKind, String)>,
}

pub(crate) fn hash_trajectories(trajectories: &[Trajectory<f64>]) -> String {
    let mut h = Sha256::new();
    for tr in trajectories {
        h.update((tr.condition as u64).to_le_bytes());
        for v in tr.states.iter().chain(&tr.actions) {
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

fn update_dataset_hash(h: &mut Sha256, data: &ReflexDataset<f64>) {
    for r in &data.records {
        h.update((r.condition as u64).to_le_bytes());
        h.update((r.timestep as u64).to_le_bytes());
        let parts = [r.state.as_slice(), r.action.as_slice(), r.cov_prev.as_slice()];
        for x in parts.into_iter().flatten().chain(r.reflex.to_flat().iter()) {
            h.update(x.to_le_bytes());
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean final-state MSE of `eval_rollouts` rollouts from `condition`. All
/// controllers evaluated at one iteration see the same initial states and
/// process noise.
fn evaluate_condition<C: Controller + ?Sized>(
    config: &ExperimentConfig,
    condition: &Condition,
    controller: &C,
    iteration: usize,
    tag: u64,
) -> f64 {
    let mut rng = stream(config.seed, Stream::Eval, (iteration as u64) << 8 | tag, condition.id as u64);
    let mut total = 0.0;
    for _ in 0..config.eval_rollouts {
        total += match rollout(&config.env, controller, condition, &mut rng) {
            Ok(tr) => final_state_mse(&tr, &condition.goal()),
            Err(_) => f64::INFINITY,
        };
    }
    total / config.eval_rollouts as f64
}

fn push_mse(metrics: &mut Metrics, iteration: usize, name: &str, per_condition: &[f64]) {
    let mean = per_condition.iter().sum::<f64>() / per_condition.len() as f64;
    metrics.push(iteration, format!("{name}_mse"), mean);
    for (c, v) in per_condition.iter().enumerate() {
        metrics.push(iteration, format!("{name}_mse_c{c}"), *v);
    }
}

/// Runs guided policy search for `config.policy`.
pub fn run_gps(config: &ExperimentConfig) -> Result<RunResult> {
    run_gps_with_shadow(config, None)
}

/// Runs guided policy search; if `shadow` is given, a second policy of that
/// kind is trained on the same S-step datasets without influencing the
/// C-steps or the exploration.
pub fn run_gps_with_shadow(config: &ExperimentConfig, shadow: Option<PolicyKind>) -> Result<RunResult> {
    config.validate()?;
    let env = &config.env;
    let dx = env.state_dim();
    let du = env.action_dim();
    let horizon = env.horizon;

    let mut policy = TrainedPolicy::new(config.policy, config, &mut stream(config.seed, Stream::Init, 0, 0));
    let mut shadow = shadow
        .filter(|k| *k != config.policy)
        .map(|k| TrainedPolicy::new(k, config, &mut stream(config.seed, Stream::Init, 1, 0)));

    let costs = config
        .conditions
        .iter()
        .map(|c| expand_cost(&config.cost.spec(&c.goal), du, horizon))
        .collect::<Result<Vec<_>>>()?;
    let initial_reflex = MotorReflex::zero(dx, du, config.initial_variance);
    let mut locals: Vec<LocalPolicy<f64>> = config
        .conditions
        .iter()
        .map(|_| LocalPolicy::constant(initial_reflex.clone(), horizon))
        .collect();

    let mut metrics = Metrics::default();
    let mut diagnostics = Vec::new();
    let mut losses = Vec::new();
    let mut exploration = Vec::new();
    let mut lead_hash = Sha256::new();
    let mut shadow_hash = Sha256::new();

    for n in 1..=config.iterations {
        let use_global = config.sampler == Sampler::Alternate && n % 2 == 0;
        let mut datasets = Vec::with_capacity(config.conditions.len());
        let mut new_locals = Vec::with_capacity(config.conditions.len());
        policy.set_mode(Mode::Train);
        for (ci, cond) in config.conditions.iter().enumerate() {
            let ctx = |e: Error| e.context(format!("iteration {n}, condition {ci}"));
            let mut samples = Vec::with_capacity(config.samples_per_condition);
            for s in 0..config.samples_per_condition {
                let mut rng = stream(config.seed, Stream::Sample, (n as u64) << 8 | ci as u64, s as u64);
                let x0 = cond.sample_initial(&mut rng).map_err(ctx)?;
                let tr = if use_global {
                    rollout_from(env, &policy, x0, ci, &mut rng)
                } else {
                    rollout_from(env, &locals[ci], x0, ci, &mut rng)
                }
                .map_err(ctx)?;
                samples.push(tr);
            }
            let dynamics =
                fit_dynamics_windowed(&samples, config.dynamics_regularization, config.dynamics_window)
                    .map_err(ctx)?;
            exploration.extend(samples);

            let reference: Vec<MotorReflex<f64>> = if n == 1 {
                locals[ci].reflexes.clone()
            } else {
                policy.set_mode(Mode::Test);
                let r = locals[ci]
                    .marginal_means
                    .iter()
                    .take(horizon)
                    .map(|x| policy.linearize(x))
                    .collect::<Result<Vec<_>>>()
                    .map_err(ctx)?;
                policy.set_mode(Mode::Train);
                r
            };
            let initial = GaussianState {
                mean: cond.initial_mean(),
                cov: cond.initial_cov(),
            };
            let mut rng = stream(config.seed, Stream::CStep, n as u64, ci as u64);
            let out = c_step(
                &dynamics,
                &costs[ci],
                &reference,
                &initial,
                config.epsilon,
                ci,
                &config.cstep,
                &mut rng,
            )
            .map_err(ctx)?;
            let (lambda_min, lambda_max) = out.dual.lambda_range();
            diagnostics.push(CStepDiagnostic {
                iteration: n,
                condition: ci,
                epsilon: config.epsilon.is_finite().then_some(config.epsilon),
                kl: out.kl,
                lambda_min,
                lambda_max,
                expected_cost: out.expected_cost,
                passes: out.passes,
                dataset_size: out.dataset.len(),
            });
            datasets.push(out.dataset);
            new_locals.push(out.policy);
        }
        locals = new_locals;

        let pooled = ReflexDataset::pooled(&datasets);
        update_dataset_hash(&mut lead_hash, &pooled);
        let mut rng = stream(config.seed, Stream::Train, n as u64, 0);
        let history = policy
            .s_step(&pooled, config, &mut rng)
            .map_err(|e| e.context(format!("iteration {n}, S-step")))?;
        losses.push((n, policy.kind(), history));
        if let Some(sh) = shadow.as_mut() {
            update_dataset_hash(&mut shadow_hash, &pooled);
            let mut rng = stream(config.seed, Stream::Train, n as u64, 1);
            let history = sh
                .s_step(&pooled, config, &mut rng)
                .map_err(|e| e.context(format!("iteration {n}, shadow S-step")))?;
            losses.push((n, sh.kind(), history));
        }

        policy.set_mode(Mode::Test);
        let per: Vec<f64> = config
            .conditions
            .iter()
            .map(|c| evaluate_condition(config, c, &policy, n, 0))
            .collect();
        push_mse(&mut metrics, n, policy.kind().name(), &per);
        if let Some(sh) = shadow.as_mut() {
            sh.set_mode(Mode::Test);
            let per: Vec<f64> = config
                .conditions
                .iter()
                .map(|c| evaluate_condition(config, c, sh, n, 0))
                .collect();
            push_mse(&mut metrics, n, sh.kind().name(), &per);
        }
        let lqr: Vec<f64> = config
            .conditions
            .iter()
            .zip(&locals)
            .map(|(c, local)| evaluate_condition(config, c, &MeanLocalPolicy(local), n, 0))
            .collect();
        push_mse(&mut metrics, n, "lqr", &lqr);
        let mean_cost = diagnostics[diagnostics.len() - locals.len()..]
            .iter()
            .map(|d| d.expected_cost)
            .sum::<f64>()
            / locals.len() as f64;
        metrics.push(n, "expected_cost", mean_cost);
    }

    let exploration_sha256 = hash_trajectories(&exploration);
    let mut dataset_sha256 = vec![(policy.kind(), hex(&lead_hash.finalize()))];
    if let Some(sh) = &shadow {
        dataset_sha256.push((sh.kind(), hex(&shadow_hash.finalize())));
    }
    Ok(RunResult {
        policy,
        shadow,
        local_policies: locals,
        metrics,
        diagnostics,
        losses,
        exploration,
        exploration_sha256,
        dataset_sha256,
    })
}
