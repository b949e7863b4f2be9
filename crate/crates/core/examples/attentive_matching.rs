//! Computes cross-channel matching representations with uniform weights
//! under each attention scope.
//!
//! ```text
//! cargo run --release --example attentive_matching
//! ```

use motifrec::encoder::{channel_graphs, encode_channels, glorot_uniform};
use motifrec::matching::{matching_representations, AttentionScope, MatchingWeights};
use motifrec::motif::{extract_motifs, Channel};
use motifrec::rng::{stream, Stream};
use motifrec::synthetic::{planted_blocks, PlantedConfig};

fn main() -> motifrec::Result<()> {
    let ds = planted_blocks(&PlantedConfig::default(), 2)?.dataset;
    let motifs = extract_motifs(&ds.social, &ds.train)?;
    let d = 12;
    let p0 = glorot_uniform(ds.n_users, d, &mut stream(2, Stream::Init));
    let weights = MatchingWeights::uniform(d);
    let scopes = [
        ("full", AttentionScope::Full),
        ("first 50 users", AttentionScope::Subset((0..50).collect())),
        ("top 16", AttentionScope::TopK(16)),
    ];
    for (name, scope) in scopes {
        let mut bundle = encode_channels(&p0, channel_graphs(&motifs, &Channel::ALL)?, 2)?;
        let evals = matching_representations(&mut bundle, &weights, &scope)?;
        print!("{name:>15}: {evals} matching evaluations;");
        for (c, m) in &bundle.matching {
            let norm = m.mapv(|x| x * x).sum().sqrt() / (m.nrows() as f64).sqrt();
            print!(" {c} rms row norm {norm:.4}");
        }
        println!();
    }
    Ok(())
}
