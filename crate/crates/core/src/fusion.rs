//! Two-level attention fusion: matching vs common representation within a
//! channel, then across channels.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Parameters of one softmax attention level: `score(h) = hᵀ W a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLevel {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
}

impl AttentionLevel {
    pub fn score(&self, h: ArrayView1<f64>) -> f64 {
        h.dot(&self.w).dot(&self.a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub within: AttentionLevel,
    pub across: AttentionLevel,
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Softmax-weighted sum of `inputs` under `level`; returns the fused vector
/// and the coefficients.
pub fn attend(inputs: &[ArrayView1<'_, f64>], level: &AttentionLevel) -> (Array1<f64>, Vec<f64>) {
    let scores: Vec<f64> = inputs.iter().map(|h| level.score(*h)).collect();
    let alpha = softmax(&scores);
    let mut out = Array1::zeros(inputs[0].len());
    for (h, a) in inputs.iter().zip(&alpha) {
        out.scaled_add(*a, h);
    }
    (out, alpha)
}

/// Fuses a channel's matching and common representation of one user.
/// Returns `(h_c, α_m, α_n)`.
pub fn within_channel_fuse(
    matching: ArrayView1<f64>,
    common: ArrayView1<f64>,
    weights: &AttentionWeights,
) -> (Array1<f64>, f64, f64) {
    let (h, alpha) = attend(&[matching.view(), common.view()], &weights.within);
    (h, alpha[0], alpha[1])
}

/// Fuses per-channel representations of one user into the final one.
pub fn cross_channel_fuse(
    channels: &[ArrayView1<f64>],
    weights: &AttentionWeights,
) -> (Array1<f64>, Vec<f64>) {
    attend(channels, &weights.across)
}

/// Writes `user_id,alpha_s,alpha_j,alpha_p` rows. `alphas` is `n × 3` in
/// social/joint/purchase order; a removed channel carries zero weight.
pub fn export_attention(
    dataset: &Dataset,
    alphas: &Array2<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if alphas.dim() != (dataset.n_users, 3) {
        return Err(Error::Shape(format!(
            "attention matrix {:?} for {} users",
            alphas.dim(),
            dataset.n_users
        )));
    }
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "user_id,alpha_s,alpha_j,alpha_p")?;
        for u in 0..dataset.n_users {
            let r = alphas.row(u);
            writeln!(
                f,
                "{},{},{},{}",
                dataset.user_ids.external(u),
                r[0],
                r[1],
                r[2]
            )?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
