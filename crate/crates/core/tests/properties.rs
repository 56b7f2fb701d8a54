mod common;

use common::{random_reflex, random_spd};
use gmr_core::dynamics::{fit_dynamics, Trajectory};
use gmr_core::nn::checkpoint::{read_network, write_network};
use gmr_core::nn::{Activation, Network};
use gmr_core::policy::{latent_kl, reflex_kl_direct, reflex_kl_loss};
use gmr_core::trajopt::reflex_kl;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_trajectories(seed: u64, count: usize) -> Vec<Trajectory<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.95]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.3]);
    (0..count)
        .map(|_| {
            let mut x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let mut states = vec![x.clone()];
            let mut actions = Vec::new();
            for _ in 0..3 {
                let u = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
                x = &a * &x + &b * &u + DVector::from_fn(2, |_, _| rng.random_range(-0.05..0.05));
                states.push(x.clone());
                actions.push(u);
            }
            Trajectory::new(0, states, actions).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn action_route_equals_direct_reflex_kl(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dx = rng.random_range(1..6);
        let du = rng.random_range(1..4);
        let reflex = random_reflex(dx, du, &mut rng);
        let reference = random_reflex(dx, du, &mut rng);
        let x = DVector::from_fn(dx, |_, _| rng.random_range(-2.0..2.0));
        let via_action = reflex_kl_loss(&reflex, &reference.mean_action(&x), &reference.cov, &x).unwrap();
        let direct = reflex_kl_direct(&reflex, &reference, &reference.cov, &x).unwrap();
        prop_assert!((via_action.total() - direct.total()).abs() < 1e-10 * direct.total().abs().max(1.0));
    }

    #[test]
    fn conditional_kl_is_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_reflex(3, 2, &mut rng);
        let q = random_reflex(3, 2, &mut rng);
        let mean = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let cov = random_spd(3, &mut rng);
        prop_assert!(reflex_kl(&p, &q, &mean, &cov).unwrap() >= -1e-12);
        prop_assert!(reflex_kl(&p, &p, &mean, &cov).unwrap().abs() < 1e-10);
    }

    #[test]
    fn latent_kl_is_nonnegative(mu in prop::collection::vec(-3.0..3.0f64, 1..6), s in 0.05..3.0f64) {
        let mu = DVector::from_vec(mu);
        let sigma = DVector::from_element(mu.len(), s);
        prop_assert!(latent_kl(&mu, &sigma) >= 0.0);
    }

    #[test]
    fn dynamics_fit_ignores_sample_order(seed in any::<u64>(), rot in 0usize..8) {
        let samples = noisy_trajectories(seed, 8);
        let mut shuffled = samples.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let a = fit_dynamics(&samples, 1e-6).unwrap();
        let b = fit_dynamics(&shuffled, 1e-6).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            prop_assert!((&x.fxu - &y.fxu).amax() < 1e-9);
            prop_assert!((&x.fc - &y.fc).amax() < 1e-9);
            prop_assert!((&x.cov - &y.cov).amax() < 1e-9);
        }
    }

    #[test]
    fn dynamics_residuals_are_centred(seed in any::<u64>()) {
        let samples = noisy_trajectories(seed, 10);
        let fit = fit_dynamics(&samples, 1e-6).unwrap();
        for (t, step) in fit.steps.iter().enumerate() {
            let mut sum = DVector::zeros(2);
            for s in &samples {
                let pred = fit.predict(t, &s.states[t], &s.actions[t]).unwrap().mean;
                sum += &s.states[t + 1] - pred;
            }
            prop_assert!(sum.amax() < 1e-9);
            prop_assert!(step.cov.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net: Network<f64> = Network::init(&[3, 4, 2], Activation::LeakyRelu, Activation::Identity, &mut rng);
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        let back: Network<f64> = read_network(buf.as_slice()).unwrap();
        prop_assert_eq!(back, net);
    }
}
