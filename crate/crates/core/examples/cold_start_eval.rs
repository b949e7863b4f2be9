//! Trains once on planted data where half the users are sparse and evaluates the same model on all
//! users and on cold-start users only.
//!
//! ```text
//! cargo run --release --example cold_start_eval -- [seed]
//! ```

use motifrec::data::{dataset_from_pairs, filter_cold_start, holdout_split};
use motifrec::eval::{Scenario, COLD_START_THRESHOLD};
use motifrec::rng::{stream, Stream};
use motifrec::ssl::SslConfig;
use motifrec::synthetic::{planted_blocks, PlantedConfig};
use motifrec::train::{train, TrainConfig};

fn main() -> motifrec::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let planted = planted_blocks(&PlantedConfig::default(), seed)?.dataset;
    // Odd users keep only half of their interactions.
    let pairs: Vec<(usize, usize)> = planted
        .user_train_items()
        .iter()
        .enumerate()
        .flat_map(|(u, items)| {
            let keep = if u % 2 == 1 {
                items.len() / 2
            } else {
                items.len()
            };
            items[..keep].iter().map(move |&i| (u, i))
        })
        .collect();
    let edges: Vec<(usize, usize)> = planted.social.iter().map(|(a, b, _)| (a, b)).collect();
    let ds = dataset_from_pairs(planted.n_users, planted.n_items, &pairs, &edges)?;
    let split = holdout_split(&ds, 0.2, &mut stream(seed, Stream::Split))?;
    let cold = filter_cold_start(&split, COLD_START_THRESHOLD);
    println!(
        "{} of {} users have fewer than {COLD_START_THRESHOLD} interactions",
        (0..cold.n_users).filter(|&u| cold.is_eval_user(u)).count(),
        split.n_users
    );

    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(&split, &cfg, &SslConfig::default())?;
    for scenario in [Scenario::General, Scenario::ColdStart] {
        let r = outcome.evaluate(&split, scenario, 10)?;
        println!(
            "{scenario:>10}: {} users, P@10 {:.4}, R@10 {:.4}, NDCG@10 {:.4}",
            r.n_users, r.precision_at_k, r.recall_at_k, r.ndcg_at_k
        );
    }
    Ok(())
}
