//! Evaluates the self-supervised losses on aligned and unrelated
//! representation batches.
//!
//! ```text
//! cargo run --release --example contrastive_losses
//! ```

use motifrec::encoder::glorot_uniform;
use motifrec::rng::{stream, Stream};
use motifrec::sparse::SparseMatrix;
use motifrec::ssl::{bpr_loss, hmim_channel, infonce_batch, joint_loss, SslConfig};

fn main() -> motifrec::Result<()> {
    let mut rng = stream(3, Stream::Synthetic);
    let a = glorot_uniform(64, 16, &mut rng) * 4.0;
    let noise = glorot_uniform(64, 16, &mut rng) * 0.5;
    let unrelated = glorot_uniform(64, 16, &mut rng) * 4.0;
    let aligned = &a + &noise;

    for tau in [0.1, 0.5, 1.0] {
        println!(
            "tau {tau}: InfoNCE aligned {:.4}, unrelated {:.4}, chance level {:.4}",
            infonce_batch(&a, &aligned, tau)?,
            infonce_batch(&a, &unrelated, tau)?,
            (64f64).ln()
        );
    }

    let cfg = SslConfig::default();
    let ego = SparseMatrix::identity(64);
    let h = hmim_channel(&a, &ego, &cfg, &mut stream(3, Stream::Shuffling))?;
    println!("hierarchical MI loss with self-only ego networks {h:.4}");

    let (u, i, j) = (a.row(0), aligned.row(0), unrelated.row(0));
    let l_r = bpr_loss(u, i, j, 0.0, 0.0);
    println!(
        "BPR with the aligned row as positive {l_r:.4}; swapped {:.4}",
        bpr_loss(u, j, i, 0.0, 0.0)
    );
    println!(
        "joint objective with l_1 = 1, l_2 = 1: {:.4}",
        joint_loss(l_r, 1.0, 1.0, &cfg)
    );
    Ok(())
}
