//! Sweeps the contrast temperature and the encoder depth on planted data,
//! writing `sweep.csv` and `sweep.json` to a temporary directory.
//!
//! ```text
//! cargo run --release --example sensitivity_sweep -- [epochs]
//! ```

use motifrec::commands::cmd_sweep;
use motifrec::config::RunConfig;

fn main() -> motifrec::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let dir = std::env::temp_dir().join("motifrec_sweep");
    let mut cfg = RunConfig {
        output_dir: dir.clone(),
        ..RunConfig::default()
    };
    cfg.train.epochs = epochs;
    cfg.train.seed = 5;
    cfg.sweep.tau = vec![0.1, 0.5, 1.0];
    cfg.sweep.depth = vec![1, 2, 3];
    println!(
        "{:>5} {:>5} {:>6} {:>8} {:>8}",
        "tau", "depth", "status", "R@10", "NDCG@10"
    );
    for p in cmd_sweep(&cfg)? {
        let m = p.metrics.unwrap_or_default();
        println!(
            "{:>5} {:>5} {:>6} {:>8.4} {:>8.4}",
            p.tau, p.depth, p.status, m.recall, m.ndcg
        );
    }
    println!("results in {}", dir.display());
    Ok(())
}
