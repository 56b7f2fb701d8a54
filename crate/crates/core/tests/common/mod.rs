#![allow(dead_code)]

use gmr_core::policy::{GmrConfig, GmrPolicy};
use gmr_core::trajopt::{MotorReflex, ReflexDataset, ReflexRecord};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn small_gmr_config() -> GmrConfig {
    GmrConfig {
        latent_dim: 3,
        encoder_hidden: 6,
        decoder_hidden: 5,
        translator_hidden: 7,
        ..GmrConfig::default()
    }
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn random_reflex<R: Rng>(dx: usize, du: usize, rng: &mut R) -> MotorReflex<f64> {
    MotorReflex::new(
        DMatrix::from_fn(du, dx, |_, _| rng.random_range(-1.0..1.0)),
        DVector::from_fn(du, |_, _| rng.random_range(-1.0..1.0)),
        random_spd(du, rng),
    )
    .unwrap()
}

pub fn random_dataset<R: Rng>(dx: usize, du: usize, n: usize, rng: &mut R) -> ReflexDataset<f64> {
    let records = (0..n)
        .map(|i| {
            let state = DVector::from_fn(dx, |_, _| rng.random_range(-1.0..1.0));
            let reflex = random_reflex(dx, du, rng);
            ReflexRecord {
                condition: 0,
                timestep: i,
                action: reflex.mean_action(&state),
                cov_prev: reflex.cov.clone(),
                state,
                reflex,
            }
        })
        .collect();
    ReflexDataset { records }
}

pub fn small_gmr<R: Rng>(dx: usize, du: usize, rng: &mut R) -> GmrPolicy<f64> {
    GmrPolicy::new(dx, du, small_gmr_config(), rng)
}

/// Largest relative deviation between analytic and central-difference
/// gradients; components below `floor` in both are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                (a - n).abs() / floor
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
