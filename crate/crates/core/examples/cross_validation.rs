//! Runs repeated k-fold cross-validation on planted data and prints the
//! per-fold and aggregated metrics.
//!
//! ```text
//! cargo run --release --example cross_validation -- [folds] [repeats] [epochs]
//! ```

use motifrec::eval::{cross_validate, Scenario};
use motifrec::ssl::SslConfig;
use motifrec::synthetic::{planted_blocks, PlantedConfig};
use motifrec::train::TrainConfig;

fn main() -> motifrec::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let folds = args.next().flatten().unwrap_or(5);
    let repeats = args.next().flatten().unwrap_or(1);
    let epochs = args.next().flatten().unwrap_or(10);
    let ds = planted_blocks(&PlantedConfig::default(), 4)?.dataset;
    let cfg = TrainConfig {
        epochs,
        seed: 4,
        ..TrainConfig::default()
    };
    let report = cross_validate(
        &ds,
        &cfg,
        &SslConfig::default(),
        folds,
        repeats,
        Scenario::General,
    )?;
    for run in &report.runs {
        println!(
            "repeat {} fold {}: best epoch {:>2}, P@10 {:.4}, R@10 {:.4}, NDCG@10 {:.4} over {} users",
            run.repeat, run.fold, run.best_epoch, run.metrics.precision, run.metrics.recall, run.metrics.ndcg, run.n_users
        );
    }
    let (m, s) = (report.mean, report.std);
    println!(
        "mean P@10 {:.4} ± {:.4}, R@10 {:.4} ± {:.4}, NDCG@10 {:.4} ± {:.4}",
        m.precision, s.precision, m.recall, s.recall, m.ndcg, s.ndcg
    );
    Ok(())
}
