//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Run with `cargo test --release -p gmr-core --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use common::{max_relative_error, random_dataset, random_reflex};
use gmr_core::dynamics::{fit_dynamics, LinearGaussianDynamics, Trajectory};
use gmr_core::envs::EnvSpec;
use gmr_core::harness::{compare_policies, run_gps, write_metrics_csv, ExperimentConfig, RunResult};
use gmr_core::policy::{
    baseline_loss, gmr_loss_with_noise, reflex_kl_direct, reflex_kl_loss, BaselineConfig,
    BaselinePolicy, GmrConfig, GmrPolicy, TrainingSet,
};
use gmr_core::trajopt::{lqr_backward, CostStep, MotorReflex, QuadraticCost, KL_TOLERANCE};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    Outcome {
        pass,
        detail,
        elapsed: start.elapsed(),
    }
}

// ---------------------------------------------------------------- 1

/// Textbook backward Riccati recursion, written independently of the
/// library's Q-function formulation.
fn riccati_gains(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Vec<DMatrix<f64>> {
    let mut p = q.clone();
    let mut out = vec![DMatrix::zeros(b.ncols(), a.ncols()); horizon];
    for t in (0..horizon).rev() {
        let btp = b.transpose() * &p;
        let k = (r + &btp * b).lu().solve(&(&btp * a)).unwrap();
        let closed = a - b * &k;
        p = q + k.transpose() * r * &k + closed.transpose() * &p * &closed;
        out[t] = -k;
    }
    out
}

fn riccati_oracle() -> (bool, String) {
    let horizon = 80;
    let systems = [
        (DMatrix::from_element(1, 1, 1.05), DMatrix::from_element(1, 1, 0.2), 1.0, 0.5),
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 0.99]),
            DMatrix::from_row_slice(2, 1, &[0.00125, 0.05]),
            2.0,
            0.1,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (a, b, qw, rw) in systems {
        let dx = a.nrows();
        let du = b.ncols();
        let q = DMatrix::identity(dx, dx) * qw;
        let r = DMatrix::identity(du, du) * rw;
        let mut lxuxu = DMatrix::zeros(dx + du, dx + du);
        lxuxu.view_mut((0, 0), (dx, dx)).copy_from(&q);
        lxuxu.view_mut((dx, dx), (du, du)).copy_from(&r);
        let cost = QuadraticCost {
            steps: vec![CostStep { lxuxu, lxu: DVector::zeros(dx + du), lconst: 0.0 }; horizon],
            terminal_xx: q.clone(),
            terminal_x: DVector::zeros(dx),
            terminal_const: 0.0,
            state_dim: dx,
            action_dim: du,
        };
        let dynamics = LinearGaussianDynamics::time_invariant(&a, &b, &DVector::zeros(dx), &(DMatrix::identity(dx, dx) * 1e-6), horizon);
        let pass = lqr_backward(&dynamics, &cost, None, &vec![0.0; horizon]).unwrap();
        for (reflex, k) in pass.reflexes.iter().zip(riccati_gains(&a, &b, &q, &r, horizon)) {
            worst = worst.max((&reflex.gain - k).amax());
        }
    }
    (worst < 1e-10, format!("max |gain error| {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn linear_rollouts(n: usize, noise: f64, seed: u64) -> (DMatrix<f64>, Vec<Trajectory<f64>>) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
    let b = DMatrix::from_row_slice(2, 1, &[0.05, 0.3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let trajs = (0..n)
        .map(|_| {
            let mut x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let mut states = vec![x.clone()];
            let mut actions = vec![];
            for _ in 0..5 {
                let u = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
                let w = DVector::from_fn(2, |_, _| if noise > 0.0 { gauss.sample(&mut rng) } else { 0.0 });
                x = &a * &x + &b * &u + w;
                states.push(x.clone());
                actions.push(u);
            }
            Trajectory::new(0, states, actions).unwrap()
        })
        .collect();
    let mut ab = DMatrix::zeros(2, 3);
    ab.columns_mut(0, 2).copy_from(&a);
    ab.columns_mut(2, 1).copy_from(&b);
    (ab, trajs)
}

fn dynamics_recovery() -> (bool, String) {
    let (ab, clean) = linear_rollouts(10, 0.0, 1);
    let fit = fit_dynamics(&clean, 0.0).unwrap();
    let clean_err = fit.steps.iter().map(|s| (&s.fxu - &ab).norm()).fold(0.0, f64::max);
    let (ab, noisy) = linear_rollouts(500, 0.01, 2);
    let fit = fit_dynamics(&noisy, 1e-6).unwrap();
    let noisy_err = fit.steps.iter().map(|s| (&s.fxu - &ab).norm()).fold(0.0, f64::max);
    (
        clean_err < 1e-8 && noisy_err < 0.05,
        format!("noiseless {clean_err:.2e} (< 1e-8), noisy {noisy_err:.2e} (< 0.05)"),
    )
}

// ---------------------------------------------------------------- 3, 6

fn kl_constraint(run: &RunResult, epsilon: f64) -> (bool, String) {
    let bound = (1.0 + KL_TOLERANCE) * epsilon;
    let worst = run.diagnostics.iter().map(|d| d.kl).fold(0.0, f64::max);
    (
        worst <= bound && run.diagnostics.len() == 20,
        format!("{} C-steps, max KL {worst:.3} <= {bound:.3}", run.diagnostics.len()),
    )
}

fn learning_curve(run: &RunResult) -> (bool, String) {
    let gmr = run.metrics.series("gmr_mse");
    let lqr = run.metrics.series("lqr_mse");
    let first = gmr[0];
    let last = *gmr.last().unwrap();
    let caught_up = (0..4.min(gmr.len())).find(|&i| gmr[i] <= 1.2 * lqr[i]);
    let ratio = last / first;
    (
        ratio < 0.1 && caught_up.is_some(),
        format!(
            "final/first {ratio:.3} (< 0.1); within 20% of LQR at iteration {}",
            caught_up.map_or("none".to_string(), |i| (i + 1).to_string())
        ),
    )
}

// ---------------------------------------------------------------- 4

fn gradient_check() -> (bool, String) {
    // smaller steps lose digits to cancellation on the tiniest gradients
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..2 {
        let policy = GmrPolicy::new(4, 2, GmrConfig::default(), &mut rng);
        let data = random_dataset(4, 2, 3, &mut rng);
        let set = TrainingSet::new(&data).unwrap();
        let noise = DMatrix::from_fn(policy.latent_dim(), 3, |_, _| gmr_core::Real::standard_normal(&mut rng));
        let (alpha, beta) = (0.5, 0.01);
        let (_, grads) = gmr_loss_with_noise(&policy, &set, &noise, alpha, beta).unwrap();
        let mut numeric = Vec::new();
        for which in 0..3 {
            let params = [&policy.encoder, &policy.decoder, &policy.translator][which].parameters();
            for i in 0..params.len() {
                let eval = |d: f64| {
                    let mut p = policy.clone();
                    let mut v = params.clone();
                    v[i] += d;
                    [&mut p.encoder, &mut p.decoder, &mut p.translator][which].set_parameters(&v).unwrap();
                    gmr_loss_with_noise(&p, &set, &noise, alpha, beta).unwrap().0.total()
                };
                numeric.push((eval(H) - eval(-H)) / (2.0 * H));
            }
        }
        worst = worst.max(max_relative_error(&grads.to_flat(), &numeric, 1e-5));

        let mut base = BaselinePolicy::new(4, 2, BaselineConfig::default(), &mut rng);
        for layer in base.net.layers_mut() {
            // smooth stand-in so no unit sits on its kink during differencing
            if layer.activation == gmr_core::nn::Activation::Relu {
                layer.activation = gmr_core::nn::Activation::LeakyRelu;
            }
        }
        let (_, tape) = baseline_loss(&base, &set, 0.01).unwrap();
        let params = base.net.parameters();
        let numeric: Vec<f64> = (0..params.len())
            .map(|i| {
                let eval = |d: f64| {
                    let mut p = base.clone();
                    let mut v = params.clone();
                    v[i] += d;
                    p.net.set_parameters(&v).unwrap();
                    baseline_loss(&p, &set, 0.01).unwrap().0
                };
                (eval(H) - eval(-H)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(max_relative_error(&tape.to_flat(), &numeric, 1e-5));
    }
    (worst < 1e-4, format!("max relative error {worst:.2e} (< 1e-4)"))
}

// ---------------------------------------------------------------- 5

fn appendix_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dx = rng.random_range(1..7);
        let du = rng.random_range(1..4);
        let reflex = random_reflex(dx, du, &mut rng);
        let reference = random_reflex(dx, du, &mut rng);
        let x = DVector::from_fn(dx, |_, _| rng.random_range(-2.0..2.0));
        let a = reflex_kl_loss(&reflex, &reference.mean_action(&x), &reference.cov, &x).unwrap();
        let b = reflex_kl_direct(&reflex, &reference, &reference.cov, &x).unwrap();
        worst = worst.max((a.total() - b.total()).abs());
    }
    (worst < 1e-10, format!("100 instances, max |difference| {worst:.2e}"))
}

// ---------------------------------------------------------------- 7

fn robustness() -> (bool, String) {
    let mut config = ExperimentConfig::point_mass();
    config.conditions.truncate(1);
    config.success_threshold = 0.1;
    let cmp = compare_policies(&config).unwrap();
    let (g, b) = (cmp.gmr.successes, cmp.baseline.successes);
    let tight = cmp.summary.rows.iter().find(|r| r.threshold == 0.01).unwrap();
    (
        g > b && g >= 40,
        format!(
            "threshold 0.1: GMR {g}/50, baseline {b}/50 (need GMR > baseline, GMR >= 40); threshold 0.01: GMR {}, baseline {}",
            tight.gmr_successes, tight.baseline_successes
        ),
    )
}

// ---------------------------------------------------------------- 8

fn determinism() -> (bool, String) {
    let config = ExperimentConfig::point_mass();
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("metrics_{i}.csv"));
            write_metrics_csv(&run_gps(&config).unwrap().metrics, &path).unwrap();
            std::fs::read(&path).unwrap()
        })
        .collect();
    (files[0] == files[1], format!("{} bytes per file, identical: {}", files[0].len(), files[0] == files[1]))
}

// ---------------------------------------------------------------- 9

fn parameter_count() -> (bool, String) {
    let env = EnvSpec::synthetic_linear(6);
    let (dx, du) = (env.state_dim(), env.action_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let policy = GmrPolicy::new(dx, du, GmrConfig::default(), &mut rng);
    let reflex: MotorReflex<f64> = policy.reflex_at(&DVector::zeros(dx)).unwrap();
    let n = reflex.to_flat().len();
    (
        dx == 12 && du == 6 && n == 114 && MotorReflex::<f64>::parameter_count(dx, du) == 114,
        format!("d_x={dx}, d_u={du}: {n} reflex parameters"),
    )
}

fn main() {
    // `cargo test` passes harness flags; a filter argument selects nothing
    // here, so only honour `--list`.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let epsilon = ExperimentConfig::point_mass().epsilon;
    let (mut results, heavy) = std::thread::scope(|s| {
        let c678 = s.spawn(|| {
            let start = Instant::now();
            let run = run_gps(&ExperimentConfig::point_mass()).unwrap();
            let elapsed = start.elapsed();
            (run, elapsed)
        });
        let c7 = s.spawn(|| timed(robustness));
        let c8 = s.spawn(|| timed(determinism));
        let light = vec![
            (1, "Riccati oracle", timed(riccati_oracle), Some(Duration::from_secs(1))),
            (2, "dynamics recovery", timed(dynamics_recovery), Some(Duration::from_secs(5))),
            (4, "gradient correctness", timed(gradient_check), Some(Duration::from_secs(10))),
            (5, "reflex KL identity", timed(appendix_identity), None),
            (9, "parameter count", timed(parameter_count), None),
        ];
        let (run, elapsed) = c678.join().unwrap();
        let mut heavy = vec![
            (3, "KL constraint", Outcome { elapsed, ..timed(|| kl_constraint(&run, epsilon)) }, None),
            (6, "learning curve", Outcome { elapsed, ..timed(|| learning_curve(&run)) }, Some(Duration::from_secs(600))),
        ];
        heavy.push((7, "robustness ordering", c7.join().unwrap(), None));
        heavy.push((8, "determinism", c8.join().unwrap(), None));
        (light, heavy)
    });
    results.extend(heavy);
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome, limit) in &results {
        let in_time = limit.is_none_or(|l| outcome.elapsed <= l);
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        let limit = limit.map_or(String::new(), |l| format!(", limit {:.0?}", l));
        println!(
            "criterion {n} [{name}]: {} ({}; {:.2?}{limit})",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            outcome.elapsed
        );
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
