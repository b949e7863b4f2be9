//! Encodes a random initial embedding through each motif channel and through
//! the item aggregation, printing how much each channel smooths it.
//!
//! ```text
//! cargo run --release --example channel_encoding -- [depth]
//! ```

use motifrec::encoder::{channel_graphs, encode_channels, glorot_uniform, propagate_items};
use motifrec::motif::{extract_motifs, Channel};
use motifrec::rng::{stream, Stream};
use motifrec::synthetic::{planted_blocks, PlantedConfig};

fn main() -> motifrec::Result<()> {
    let depth: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let planted = planted_blocks(&PlantedConfig::default(), 1)?;
    let ds = &planted.dataset;
    let motifs = extract_motifs(&ds.social, &ds.train)?;
    let graphs = channel_graphs(&motifs, &Channel::ALL)?;
    let p0 = glorot_uniform(ds.n_users, 16, &mut stream(1, Stream::Init));
    let bundle = encode_channels(&p0, graphs, depth)?;

    // Smoothing shows as shrinking distance between block members.
    let block_spread = |h: &ndarray::Array2<f64>| {
        let mut spread = 0.0;
        for b in 0..4 {
            let rows: Vec<usize> = (0..ds.n_users)
                .filter(|&u| planted.user_block[u] == b)
                .collect();
            let mean = h
                .select(ndarray::Axis(0), &rows)
                .mean_axis(ndarray::Axis(0))
                .unwrap();
            spread += rows
                .iter()
                .map(|&u| (&h.row(u) - &mean).mapv(|x| x * x).sum())
                .sum::<f64>();
        }
        (spread / ds.n_users as f64).sqrt()
    };
    println!("depth {depth}, {} sparse products", bundle.sparse_products);
    println!("initial within-block spread {:.4}", block_spread(&p0));
    for (c, h) in &bundle.common {
        println!("{c:>8}: within-block spread {:.4}", block_spread(h));
    }
    let (q, empty) = propagate_items(&ds.train, &bundle.common[&Channel::Purchase])?;
    println!(
        "item representations {:?}, {} items without buyers",
        q.dim(),
        empty.len()
    );
    Ok(())
}
