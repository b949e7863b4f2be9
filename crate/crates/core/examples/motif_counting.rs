//! Counts the ten user motifs of a planted dataset and prints the
//! per-channel degree statistics.
//!
//! ```text
//! cargo run --release --example motif_counting -- [seed]
//! ```

use motifrec::io::motif_stats;
use motifrec::motif::{extract_motifs, split_social, Channel};
use motifrec::synthetic::{planted_blocks, PlantedConfig};

fn main() -> motifrec::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let ds = planted_blocks(&PlantedConfig::default(), seed)?.dataset;
    let (reciprocal, one_way) = split_social(&ds.social)?;
    println!(
        "{} users, {} directed edges: {} reciprocal entries, {} one-way",
        ds.n_users,
        ds.social.nnz(),
        reciprocal.nnz(),
        one_way.nnz()
    );

    let motifs = extract_motifs(&ds.social, &ds.train)?;
    for (k, m) in motifs.motifs.iter().enumerate() {
        let total: f64 = m.values().iter().sum();
        println!("M{:<2} nnz={:>6}  total weight={total:>10}", k + 1, m.nnz());
    }
    let stats = motif_stats(&motifs);
    for (c, s) in Channel::ALL.iter().zip(&stats.channels) {
        println!(
            "{c}: nnz={} isolated={} max degree={} mean degree={:.2}",
            s.nnz, s.isolated_users, s.max_degree, s.mean_degree
        );
    }
    Ok(())
}
