//! Method configuration files (`key = value`).
//!
//! Every numeric default matches the committed example configs under
//! `configs/`. Unknown keys are rejected to catch typos.

use anyhow::{bail, Context, Result};
use ptych_core::decoder::{DecoderConfig, DEFAULT_CHANNELS};
use ptych_core::flow::FlowConfig;
use ptych_core::kv::KvDoc;
use ptych_core::recon_classic::{IeraConfig, IeraInit, SparseConfig};
use ptych_core::recon_gen::{GenReconConfig, LatentInit};
use std::path::Path;

fn check_keys(doc: &KvDoc, allowed: &[&str], origin: &Path) -> Result<()> {
    for key in doc.keys() {
        if !allowed.contains(&key) {
            bail!("{}: unknown key `{key}`", origin.display());
        }
    }
    Ok(())
}

fn parse_init(raw: &str) -> Result<IeraInit> {
    match raw {
        "flat" | "flat_magnitude" => Ok(IeraInit::FlatMagnitude),
        other => {
            if let Some(seed) = other.strip_prefix("random:") {
                Ok(IeraInit::Random { seed: seed.trim().parse().context("random seed")? })
            } else if other == "random" {
                Ok(IeraInit::Random { seed: 0 })
            } else {
                bail!("init must be `flat` or `random[:seed]`, got `{other}`")
            }
        }
    }
}

pub fn load_iera(path: &Path) -> Result<IeraConfig> {
    let doc = KvDoc::load(path)?;
    check_keys(&doc, &["epochs", "init", "track_residual"], path)?;
    Ok(IeraConfig {
        epochs: doc.parsed_or("epochs", 100)?,
        init: parse_init(doc.get("init").unwrap_or("flat"))?,
        track_residual: doc.parsed_or("track_residual", true)?,
    })
}

pub fn load_sparse(path: &Path) -> Result<SparseConfig> {
    let doc = KvDoc::load(path)?;
    check_keys(&doc, &["epochs", "init", "track_residual", "sparsity"], path)?;
    Ok(SparseConfig {
        iera: IeraConfig {
            epochs: doc.parsed_or("epochs", 100)?,
            init: parse_init(doc.get("init").unwrap_or("flat"))?,
            track_residual: doc.parsed_or("track_residual", true)?,
        },
        sparsity_s: doc.require_parsed("sparsity")?,
    })
}

/// Builds the decoder architecture for a target image size from a config.
pub fn decoder_for_size(doc: &KvDoc, size: usize, seed: u64) -> Result<DecoderConfig> {
    let latent_size: usize = doc.parsed_or("latent_size", 8.min(size / 2))?;
    if latent_size == 0 || size % latent_size != 0 || !(size / latent_size).is_power_of_two() {
        bail!("latent_size {latent_size} does not reach image size {size} by doubling");
    }
    let stages = (size / latent_size).trailing_zeros() as usize;
    let channels = match doc.get("channels") {
        Some(_) => doc.parsed_list::<usize>("channels")?,
        None => DEFAULT_CHANNELS.to_vec(),
    };
    // Truncate or extend (repeating the last entry) to the stage count.
    let channels_per_stage: Vec<usize> = (0..stages)
        .map(|i| channels[i.min(channels.len() - 1)])
        .collect();
    Ok(DecoderConfig {
        latent_channels: doc.parsed_or("latent_channels", 32)?,
        latent_h: latent_size,
        latent_w: latent_size,
        stages,
        channels_per_stage,
        skip: doc.parsed_or("skip", false)?,
        seed,
    })
}

const UNTRAINED_KEYS: &[&str] = &[
    "iterations",
    "lr",
    "seed",
    "log_every",
    "latent_channels",
    "latent_size",
    "channels",
    "skip",
];

pub fn load_untrained(path: &Path, size: usize) -> Result<(DecoderConfig, GenReconConfig)> {
    let doc = KvDoc::load(path)?;
    check_keys(&doc, UNTRAINED_KEYS, path)?;
    let seed: u64 = doc.parsed_or("seed", 0)?;
    let decoder = decoder_for_size(&doc, size, seed)?;
    let opt = GenReconConfig {
        iterations: doc.parsed_or("iterations", 5000)?,
        lr: doc.parsed_or("lr", 0.01)?,
        seed,
        log_every: doc.parsed_or("log_every", 0)?,
        latent_init: LatentInit::Zeros,
        latent_penalty: 0.0,
    };
    Ok((decoder, opt))
}

fn parse_latent_init(raw: &str) -> Result<LatentInit> {
    if raw == "zeros" {
        Ok(LatentInit::Zeros)
    } else if let Some(sigma) = raw.strip_prefix("gaussian:") {
        Ok(LatentInit::Gaussian { sigma: sigma.trim().parse().context("gaussian sigma")? })
    } else {
        bail!("latent_init must be `zeros` or `gaussian:<sigma>`, got `{raw}`")
    }
}

const INVERTIBLE_KEYS: &[&str] =
    &["iterations", "lr", "seed", "log_every", "latent_init", "latent_penalty"];

pub fn load_invertible(path: &Path) -> Result<GenReconConfig> {
    let doc = KvDoc::load(path)?;
    check_keys(&doc, INVERTIBLE_KEYS, path)?;
    Ok(GenReconConfig {
        iterations: doc.parsed_or("iterations", 3000)?,
        lr: doc.parsed_or("lr", 0.05)?,
        seed: doc.parsed_or("seed", 0)?,
        log_every: doc.parsed_or("log_every", 0)?,
        latent_init: parse_latent_init(doc.get("latent_init").unwrap_or("zeros"))?,
        latent_penalty: doc.parsed_or("latent_penalty", 0.0)?,
    })
}

const FLOW_KEYS: &[&str] = &[
    "levels",
    "steps_per_level",
    "image_size",
    "hidden_channels",
    "lr",
    "epochs",
    "batch_size",
    "warmup_steps",
    "seed",
];

pub fn load_flow_config(path: &Path) -> Result<FlowConfig> {
    let doc = KvDoc::load(path)?;
    check_keys(&doc, FLOW_KEYS, path)?;
    let toy = FlowConfig::toy(doc.parsed_or("seed", 7)?);
    Ok(FlowConfig {
        levels: doc.parsed_or("levels", toy.levels)?,
        steps_per_level: doc.parsed_or("steps_per_level", toy.steps_per_level)?,
        image_size: doc.parsed_or("image_size", toy.image_size)?,
        coupling_hidden_channels: doc.parsed_or("hidden_channels", toy.coupling_hidden_channels)?,
        lr: doc.parsed_or("lr", toy.lr)?,
        epochs: doc.parsed_or("epochs", toy.epochs)?,
        batch_size: doc.parsed_or("batch_size", toy.batch_size)?,
        warmup_steps: doc.parsed_or("warmup_steps", toy.warmup_steps)?,
        seed: toy.seed,
    })
}
