//! Trains the full model on planted-block data and prints per-epoch losses
//! and held-out metrics.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [seed]
//! ```

use motifrec::data::holdout_split;
use motifrec::rng::{stream, Stream};
use motifrec::ssl::SslConfig;
use motifrec::synthetic::{planted_blocks, PlantedConfig};
use motifrec::train::{train_with_log, TrainConfig};

fn main() -> motifrec::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let planted = planted_blocks(&PlantedConfig::default(), seed)?;
    let split = holdout_split(&planted.dataset, 0.2, &mut stream(seed, Stream::Split))?;
    println!("{}", serde_json::to_string(&split.summary())?);

    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let outcome = train_with_log(&split, &cfg, &SslConfig::default(), |e| {
        let m = e.metrics.unwrap_or_default();
        println!(
            "epoch {:>2}  L={:.4}  l_r={:.4}  l_1={:.4}  l_2={:.4}  P@10={:.4}  R@10={:.4}  NDCG@10={:.4}",
            e.epoch, e.total, e.l_r, e.l_1, e.l_2, m.precision, m.recall, m.ndcg
        );
        Ok(())
    })?;
    println!("best epoch: {}", outcome.best_epoch);
    Ok(())
}
