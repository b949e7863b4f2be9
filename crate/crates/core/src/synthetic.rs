//! Planted-block data: users and items split into blocks, users buy mostly
//! inside their own block and befriend mostly inside it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dataset_from_pairs, Dataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    pub interactions_per_user: usize,
    /// Probability that an interaction falls in the user's own block.
    pub in_block_prob: f64,
    /// Directed edge probability between users of the same block.
    pub social_in_prob: f64,
    /// Directed edge probability between users of different blocks.
    pub social_out_prob: f64,
    /// Probability that an edge is returned.
    pub reciprocal_prob: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_users: 200,
            n_items: 100,
            n_blocks: 4,
            interactions_per_user: 20,
            in_block_prob: 0.9,
            social_in_prob: 0.08,
            social_out_prob: 0.005,
            reciprocal_prob: 0.5,
        }
    }
}

/// A generated dataset and its planted block labels.
#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: Dataset,
    pub user_block: Vec<usize>,
    pub item_block: Vec<usize>,
}

pub fn planted_blocks(cfg: &PlantedConfig, seed: u64) -> Result<Planted> {
    if cfg.n_blocks == 0 || cfg.n_users < cfg.n_blocks || cfg.n_items < cfg.n_blocks {
        return Err(Error::Config(
            "need at least one user and item per block".into(),
        ));
    }
    let block_items = cfg.n_items / cfg.n_blocks;
    if cfg.interactions_per_user > block_items {
        return Err(Error::Config(
            "more interactions per user than items per block".into(),
        ));
    }
    let mut rng = stream(seed, Stream::Synthetic);
    let user_block: Vec<usize> = (0..cfg.n_users)
        .map(|u| u * cfg.n_blocks / cfg.n_users)
        .collect();
    let item_block: Vec<usize> = (0..cfg.n_items)
        .map(|i| (i * cfg.n_blocks / cfg.n_items).min(cfg.n_blocks - 1))
        .collect();
    let members =
        |b: usize| -> Vec<usize> { (0..cfg.n_items).filter(|&i| item_block[i] == b).collect() };
    let blocks: Vec<Vec<usize>> = (0..cfg.n_blocks).map(members).collect();

    let mut pairs = Vec::new();
    for (u, &own) in user_block.iter().enumerate() {
        let inside = (0..cfg.interactions_per_user)
            .filter(|_| rng.gen_bool(cfg.in_block_prob))
            .count();
        let mut chosen: Vec<usize> = blocks[own]
            .choose_multiple(&mut rng, inside)
            .copied()
            .collect();
        let outside: Vec<usize> = (0..cfg.n_items).filter(|&i| item_block[i] != own).collect();
        chosen.extend(outside.choose_multiple(&mut rng, cfg.interactions_per_user - inside));
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }

    let mut edges = Vec::new();
    for a in 0..cfg.n_users {
        for b in 0..cfg.n_users {
            if a == b {
                continue;
            }
            let p = if user_block[a] == user_block[b] {
                cfg.social_in_prob
            } else {
                cfg.social_out_prob
            };
            if rng.gen_bool(p) {
                edges.push((a, b));
                if rng.gen_bool(cfg.reciprocal_prob) {
                    edges.push((b, a));
                }
            }
        }
    }
    Ok(Planted {
        dataset: dataset_from_pairs(cfg.n_users, cfg.n_items, &pairs, &edges)?,
        user_block,
        item_block,
    })
}
