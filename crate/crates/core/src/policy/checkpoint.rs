//! Policy checkpoints: a `manifest.json` next to one weight file per
//! network in the [`crate::nn::checkpoint`] text format.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BaselineConfig, BaselinePolicy, GmrConfig, GmrPolicy, Mode};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_network, write_network};
use crate::nn::Network;
use crate::scalar::Real;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyManifest {
    Gmr {
        version: u32,
        latent_dim: usize,
        state_dim: usize,
        action_dim: usize,
        alpha: f64,
        beta: f64,
        mode: Mode,
        config: GmrConfig,
    },
    Baseline {
        version: u32,
        state_dim: usize,
        action_dim: usize,
        beta: f64,
        mode: Mode,
        config: BaselineConfig,
    },
}

fn save_net<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    write_network(net, BufWriter::new(File::create(path)?))
}

fn load_net<T: Real>(path: &Path) -> Result<Network<T>> {
    read_network(BufReader::new(File::open(path)?))
}

fn write_manifest(dir: &Path, manifest: &PolicyManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<PolicyManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_gmr<T: Real>(policy: &GmrPolicy<T>, alpha: f64, beta: f64, dir: &Path) -> Result<()> {
    write_manifest(
        dir,
        &PolicyManifest::Gmr {
            version: MANIFEST_VERSION,
            latent_dim: policy.latent_dim(),
            state_dim: policy.state_dim,
            action_dim: policy.action_dim,
            alpha,
            beta,
            mode: policy.mode,
            config: policy.config,
        },
    )?;
    save_net(&policy.encoder, &dir.join("encoder.nn"))?;
    save_net(&policy.decoder, &dir.join("decoder.nn"))?;
    save_net(&policy.translator, &dir.join("translator.nn"))
}

pub fn load_gmr<T: Real>(dir: &Path) -> Result<GmrPolicy<T>> {
    match read_manifest(dir)? {
        PolicyManifest::Gmr {
            state_dim,
            action_dim,
            mode,
            config,
            ..
        } => Ok(GmrPolicy::from_parts(
            load_net(&dir.join("encoder.nn"))?,
            load_net(&dir.join("decoder.nn"))?,
            load_net(&dir.join("translator.nn"))?,
            config,
            state_dim,
            action_dim,
        )?
        .with_mode(mode)),
        _ => Err(Error::Format("manifest does not describe a GMR policy".into())),
    }
}

pub fn save_baseline<T: Real>(policy: &BaselinePolicy<T>, beta: f64, dir: &Path) -> Result<()> {
    write_manifest(
        dir,
        &PolicyManifest::Baseline {
            version: MANIFEST_VERSION,
            state_dim: policy.state_dim(),
            action_dim: policy.action_dim(),
            beta,
            mode: policy.mode,
            config: policy.config,
        },
    )?;
    save_net(&policy.net, &dir.join("net.nn"))
}

pub fn load_baseline<T: Real>(dir: &Path) -> Result<BaselinePolicy<T>> {
    match read_manifest(dir)? {
        PolicyManifest::Baseline {
            action_dim,
            mode,
            config,
            ..
        } => Ok(BaselinePolicy {
            net: load_net(&dir.join("net.nn"))?,
            exploration_cov: DMatrix::identity(action_dim, action_dim)
                * T::lit(config.exploration_variance),
            config,
            mode,
        }),
        _ => Err(Error::Format("manifest does not describe a baseline policy".into())),
    }
}
