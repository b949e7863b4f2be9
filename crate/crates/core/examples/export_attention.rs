//! Trains on planted data, exports per-user channel attention to CSV and
//! summarizes how much weight each channel receives.
//!
//! ```text
//! cargo run --release --example export_attention -- [out.csv]
//! ```

use motifrec::data::holdout_split;
use motifrec::fusion::export_attention;
use motifrec::motif::Channel;
use motifrec::rng::{stream, Stream};
use motifrec::ssl::SslConfig;
use motifrec::synthetic::{planted_blocks, PlantedConfig};
use motifrec::train::{train, TrainConfig};
use ndarray::Axis;

fn main() -> motifrec::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motifrec_attention.csv"));
    let planted = planted_blocks(&PlantedConfig::default(), 6)?;
    let split = holdout_split(&planted.dataset, 0.2, &mut stream(6, Stream::Split))?;
    let cfg = TrainConfig {
        seed: 6,
        epochs: 10,
        ..TrainConfig::default()
    };
    let outcome = train(&split, &cfg, &SslConfig::default())?;
    let reps = outcome.represent()?;
    export_attention(&split, &reps.channel_alpha, &path)?;

    let mean = reps.channel_alpha.mean_axis(Axis(0)).unwrap();
    for c in Channel::ALL {
        let col = reps.channel_alpha.column(c.index());
        let max = col.iter().copied().fold(0.0, f64::max);
        println!("{c:>8}: mean alpha {:.4}, max {:.4}", mean[c.index()], max);
    }
    println!("wrote {}", path.display());
    Ok(())
}
