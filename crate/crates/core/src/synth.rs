//! Planted-block synthetic data.
//!
//! Users and items are split into contiguous blocks. A user interacts with
//! each item of its own block with probability `density` and with every
//! other item with probability `noise`. Each modality's item features are
//! the block's centroid (standard normal) plus `jitter`-scaled normal noise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_features, write_interactions};

/// Redraws of a user row that came out empty before giving up.
pub const MAX_USER_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    pub density: f64,
    pub noise: f64,
    pub jitter: f64,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 100,
            blocks: 4,
            density: 0.6,
            noise: 0.05,
            jitter: 0.5,
            visual_dim: 32,
            textual_dim: 16,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.blocks > self.users.min(self.items) {
            return Err(Error::Config(format!(
                "synth.blocks must be in 1..={}, got {}",
                self.users.min(self.items),
                self.blocks
            )));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Config(format!("synth.noise must be in [0, 1), got {}", self.noise)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "synth.density must be in (0, 1], got {}",
                self.density
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("synth.jitter must be non-negative, got {}", self.jitter)));
        }
        if self.visual_dim == 0 || self.textual_dim == 0 {
            return Err(Error::Config("synth feature dimensions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub pairs: Vec<(usize, usize)>,
    pub visual: Matrix,
    pub textual: Matrix,
    pub user_blocks: Vec<usize>,
    pub item_blocks: Vec<usize>,
}

/// Block of entity `k` out of `n` split into `blocks` contiguous runs.
pub fn block_of(k: usize, n: usize, blocks: usize) -> usize {
    k * blocks / n
}

fn modality_features<R: Rng>(item_blocks: &[usize], blocks: usize, dim: usize, jitter: f64, rng: &mut R) -> Matrix {
    let centroids = Matrix::from_fn(blocks, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    Matrix::from_fn(item_blocks.len(), dim, |i, c| {
        centroids.get(item_blocks[i], c) + jitter * rng.sample::<f64, _>(StandardNormal)
    })
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let user_blocks: Vec<usize> = (0..cfg.users).map(|u| block_of(u, cfg.users, cfg.blocks)).collect();
    let item_blocks: Vec<usize> = (0..cfg.items).map(|i| block_of(i, cfg.items, cfg.blocks)).collect();

    let mut pairs = Vec::new();
    let mut retries = 0usize;
    for (u, &block) in user_blocks.iter().enumerate() {
        let mut attempt = 0;
        loop {
            let row: Vec<usize> = (0..cfg.items)
                .filter(|&i| {
                    let p = if item_blocks[i] == block { cfg.density } else { cfg.noise };
                    rng.random_bool(p)
                })
                .collect();
            if !row.is_empty() {
                pairs.extend(row.into_iter().map(|i| (u, i)));
                break;
            }
            attempt += 1;
            retries += 1;
            if attempt >= MAX_USER_RETRIES {
                return Err(Error::InvalidArgument(format!(
                    "user {u} drew no interactions in {MAX_USER_RETRIES} attempts"
                )));
            }
        }
    }
    if retries > 0 {
        info!("synth: redrew {retries} empty user rows");
    }

    let visual = modality_features(&item_blocks, cfg.blocks, cfg.visual_dim, cfg.jitter, &mut rng);
    let textual = modality_features(&item_blocks, cfg.blocks, cfg.textual_dim, cfg.jitter, &mut rng);
    Ok(SynthData {
        pairs,
        visual,
        textual,
        user_blocks,
        item_blocks,
    })
}

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const VISUAL_FILE: &str = "visual.mmft";
pub const TEXTUAL_FILE: &str = "textual.mmft";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Output locations for [`write_synth`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub interactions: PathBuf,
    pub visual: PathBuf,
    pub textual: PathBuf,
    pub manifest: PathBuf,
}

impl SynthPaths {
    /// The default file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            interactions: dir.join(INTERACTIONS_FILE),
            visual: dir.join(VISUAL_FILE),
            textual: dir.join(TEXTUAL_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    }
}

/// Writes the interactions, both feature files and a manifest.
pub fn write_synth(paths: &SynthPaths, cfg: &SynthConfig, data: &SynthData) -> Result<()> {
    write_interactions(&paths.interactions, &data.pairs)?;
    write_features(&paths.visual, &data.visual)?;
    write_features(&paths.textual, &data.textual)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "users={}", cfg.users);
    let _ = writeln!(manifest, "items={}", cfg.items);
    let _ = writeln!(manifest, "blocks={}", cfg.blocks);
    let _ = writeln!(manifest, "density={:?}", cfg.density);
    let _ = writeln!(manifest, "noise={:?}", cfg.noise);
    let _ = writeln!(manifest, "jitter={:?}", cfg.jitter);
    let _ = writeln!(manifest, "visual_dim={}", cfg.visual_dim);
    let _ = writeln!(manifest, "textual_dim={}", cfg.textual_dim);
    let _ = writeln!(manifest, "seed={}", cfg.seed);
    let _ = writeln!(manifest, "interactions={}", data.pairs.len());
    write_atomic(&paths.manifest, manifest.as_bytes())
}
