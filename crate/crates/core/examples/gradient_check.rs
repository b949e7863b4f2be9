//! Compares reverse-mode gradients of the joint objective with central
//! differences on a small random problem.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use motifrec::data::dataset_from_pairs;
use motifrec::matching::AttentionScope;
use motifrec::model::{
    build_losses, forward, tensor_names, BatchPlan, ForwardOptions, ModelContext, ModelParams,
    Objective,
};
use motifrec::motif::Channel;
use motifrec::rng::{stream, Stream};
use motifrec::ssl::{DirectContrast, SslConfig};
use motifrec::tape::Tape;
use rand::Rng;

fn main() -> motifrec::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let (n_users, n_items, dim) = (12, 8, 6);
    let mut rng = stream(seed, Stream::Synthetic);
    let pairs: Vec<(usize, usize)> = (0..n_users)
        .flat_map(|u| (0..n_items).map(move |i| (u, i)))
        .filter(|&(u, i)| i == u % n_items || rng.gen_bool(0.35))
        .collect();
    let edges: Vec<(usize, usize)> = (0..n_users)
        .flat_map(|a| (0..n_users).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && rng.gen_bool(0.3))
        .collect();
    let ds = dataset_from_pairs(n_users, n_items, &pairs, &edges)?;
    let ctx = ModelContext::from_dataset(&ds, &Channel::ALL, 2)?;
    let params = ModelParams::init(n_users, dim, &mut stream(seed, Stream::Init));
    let owned = ds.user_train_items();
    let triples = (0..n_users)
        .filter_map(|u| {
            let j = (0..n_items).find(|j| !owned[u].contains(j))?;
            Some((u, owned[u][0], j))
        })
        .collect();
    let ssl = SslConfig::default();
    let plan = BatchPlan::new(
        &ctx,
        triples,
        dim,
        &ssl,
        &mut stream(seed, Stream::Shuffling),
    );
    let opts = ForwardOptions {
        matching: true,
        scope: AttentionScope::Full,
    };
    let objective = Objective {
        ssl,
        matching_ssl: true,
        direct: DirectContrast::Off,
    };

    let loss = |p: &ModelParams| -> motifrec::Result<f64> {
        let mut tape = Tape::new();
        let fv = forward(&mut tape, p, &ctx, &opts)?;
        let lv = build_losses(&mut tape, &fv, &plan, &objective)?;
        Ok(tape.scalar(lv.total))
    };
    let mut tape = Tape::new();
    let fv = forward(&mut tape, &params, &ctx, &opts)?;
    let lv = build_losses(&mut tape, &fv, &plan, &objective)?;
    let grads = tape.param_grads(lv.total, params.tensors.len());
    println!("L = {:.6}", tape.scalar(lv.total));

    let h = 1e-5;
    let mut p = params.clone();
    for (t, name) in tensor_names().iter().enumerate() {
        let g = grads[t].as_standard_layout();
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for idx in 0..p.tensors[t].len() {
            let orig = p.tensors[t].as_slice().unwrap()[idx];
            p.tensors[t].as_slice_mut().unwrap()[idx] = orig + h;
            let plus = loss(&p)?;
            p.tensors[t].as_slice_mut().unwrap()[idx] = orig - h;
            let minus = loss(&p)?;
            p.tensors[t].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = g.as_slice().unwrap()[idx];
            diff = diff.max((analytic - numeric).abs());
            scale = scale.max(analytic.abs()).max(numeric.abs());
        }
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        println!("{name:<16} max |grad| {scale:.3e}  relative error {rel:.2e}");
    }
    Ok(())
}
