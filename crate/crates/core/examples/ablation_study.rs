//! Trains every model variant on the same planted split and prints held-out
//! metrics side by side.
//!
//! ```text
//! cargo run --release --example ablation_study -- [seed] [epochs]
//! ```

use motifrec::data::holdout_split;
use motifrec::eval::Scenario;
use motifrec::rng::{stream, Stream};
use motifrec::ssl::{DirectContrast, SslConfig};
use motifrec::synthetic::{planted_blocks, PlantedConfig};
use motifrec::train::{train, TrainConfig};

type Variant = (&'static str, fn(&mut TrainConfig));

fn main() -> motifrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let planted = planted_blocks(&PlantedConfig::default(), seed)?;
    let split = holdout_split(&planted.dataset, 0.2, &mut stream(seed, Stream::Split))?;

    let variants: [Variant; 8] = [
        ("full", |_| {}),
        ("no_social", |c| c.ablation.no_social = true),
        ("no_joint", |c| c.ablation.no_joint = true),
        ("no_purchase", |c| c.ablation.no_purchase = true),
        ("no_matching_ssl", |c| c.ablation.no_matching_ssl = true),
        ("no_matching", |c| c.ablation.no_matching = true),
        ("direct_infonce", |c| {
            c.ablation.direct_contrast = DirectContrast::Infonce
        }),
        ("direct_triplet", |c| {
            c.ablation.direct_contrast = DirectContrast::Triplet
        }),
    ];
    println!(
        "{:<16} {:>6} {:>8} {:>8} {:>8}",
        "variant", "best", "P@10", "R@10", "NDCG@10"
    );
    for (name, apply) in variants {
        let mut cfg = TrainConfig {
            seed,
            epochs,
            ..TrainConfig::default()
        };
        apply(&mut cfg);
        let outcome = train(&split, &cfg, &SslConfig::default())?;
        let r = outcome.evaluate(&split, Scenario::General, 10)?;
        println!(
            "{name:<16} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            outcome.best_epoch, r.precision_at_k, r.recall_at_k, r.ndcg_at_k
        );
    }
    Ok(())
}
