//! Cross-channel attentive matching.
//!
//! For an ordered channel pair `(i, l)`:
//!
//! 1. ego-aggregate both channels with a shared linear layer (GCN#1),
//! 2. move every node of channel `i` into channel `l` by a cosine-attention
//!    weighted mean of channel `l`'s nodes,
//! 3. compare the node with its transition by a multi-view cosine, one view
//!    per row of the view matrix,
//! 4. ego-aggregate the matching vectors again (GCN#2, one layer per target
//!    channel).
//!
//! A channel's matching representation sums this over every other channel.
//! The kernels here also provide the hand-derived backward passes used by the
//! gradient tape.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{ChannelBundle, ChannelGraph};
use crate::error::{Error, Result};
use crate::motif::Channel;
use crate::sparse::SparseMatrix;

/// Which nodes of the second channel each node attends over.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionScope {
    /// Every node.
    Full,
    /// A fixed node subset, typically the users of the current mini-batch.
    Subset(Vec<usize>),
    /// The `k` most cosine-similar nodes of each row.
    TopK(usize),
}

/// Configuration-level scope choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeKind {
    Full,
    Batch,
    Topk,
}

/// Candidate columns resolved from an [`AttentionScope`].
#[derive(Debug, Clone, PartialEq)]
pub enum Candidates {
    Shared(Vec<usize>),
    PerRow(Vec<Vec<usize>>),
}

impl Candidates {
    fn for_row(&self, i: usize) -> &[usize] {
        match self {
            Candidates::Shared(c) => c,
            Candidates::PerRow(rows) => &rows[i],
        }
    }
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Gradient of `cosine(a, b)` with respect to `a` and `b`, zero when either
/// vector vanishes.
fn cosine_grad(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<(f64, Array1<f64>, Array1<f64>)> {
    let na2 = a.dot(&a);
    let nb2 = b.dot(&b);
    if na2 == 0.0 || nb2 == 0.0 {
        return None;
    }
    let denom = (na2 * nb2).sqrt();
    let c = a.dot(&b) / denom;
    let da = &b / denom - &a * (c / na2);
    let db = &a / denom - &b * (c / nb2);
    Some((c, da, db))
}

pub fn resolve_candidates(
    g1: &Array2<f64>,
    g2: &Array2<f64>,
    scope: &AttentionScope,
) -> Candidates {
    match scope {
        AttentionScope::Full => Candidates::Shared((0..g2.nrows()).collect()),
        AttentionScope::Subset(s) => Candidates::Shared(s.clone()),
        AttentionScope::TopK(k) => {
            let rows = (0..g1.nrows())
                .into_par_iter()
                .map(|i| {
                    let mut scored: Vec<(f64, usize)> = (0..g2.nrows())
                        .map(|j| (cosine(g1.row(i), g2.row(j)), j))
                        .collect();
                    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    let mut top: Vec<usize> = scored.into_iter().take(*k).map(|(_, j)| j).collect();
                    top.sort_unstable();
                    top
                })
                .collect();
            Candidates::PerRow(rows)
        }
    }
}

/// Attention weights of row `i`: `max(0, cos(g1_i, g2_j))` over candidates.
fn row_weights(g1: &Array2<f64>, g2: &Array2<f64>, i: usize, cands: &[usize]) -> Vec<f64> {
    cands
        .iter()
        .map(|&j| cosine(g1.row(i), g2.row(j)).max(0.0))
        .collect()
}

/// Forward of the transition with explicit candidates.
pub fn cross_attention_with(g1: &Array2<f64>, g2: &Array2<f64>, cands: &Candidates) -> Array2<f64> {
    let d = g1.ncols();
    let rows: Vec<Array1<f64>> = (0..g1.nrows())
        .into_par_iter()
        .map(|i| {
            let cs = cands.for_row(i);
            let alpha = row_weights(g1, g2, i, cs);
            let total: f64 = alpha.iter().sum();
            if total > 0.0 {
                let mut acc = Array1::zeros(d);
                for (&j, &a) in cs.iter().zip(&alpha) {
                    if a > 0.0 {
                        acc.scaled_add(a, &g2.row(j));
                    }
                }
                acc / total
            } else {
                g1.row(i).to_owned()
            }
        })
        .collect();
    let mut out = Array2::zeros((g1.nrows(), d));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    out
}

/// Cosine-attention transition of every `g1` row into the space of `g2`.
///
/// Negative similarities are clamped to zero so each output is a convex
/// combination of `g2` rows; a row with no positive similarity falls back to
/// itself.
pub fn cross_attention_transition(
    g1: &Array2<f64>,
    g2: &Array2<f64>,
    scope: &AttentionScope,
) -> Result<Array2<f64>> {
    if g1.ncols() != g2.ncols() {
        return Err(Error::Shape(format!(
            "attention over {:?} and {:?}",
            g1.dim(),
            g2.dim()
        )));
    }
    let cands = resolve_candidates(g1, g2, scope);
    Ok(cross_attention_with(g1, g2, &cands))
}

/// Backward of [`cross_attention_with`]; recomputes the weights instead of
/// caching an `n × m` matrix.
pub fn cross_attention_backward(
    g1: &Array2<f64>,
    g2: &Array2<f64>,
    out: &Array2<f64>,
    cands: &Candidates,
    grad: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut d1 = Array2::zeros(g1.dim());
    let mut d2 = Array2::zeros(g2.dim());
    for i in 0..g1.nrows() {
        let gi = grad.row(i);
        let cs = cands.for_row(i);
        let alpha = row_weights(g1, g2, i, cs);
        let total: f64 = alpha.iter().sum();
        if total <= 0.0 {
            d1.row_mut(i).scaled_add(1.0, &gi);
            continue;
        }
        let oi = out.row(i);
        for (&j, &a) in cs.iter().zip(&alpha) {
            if a <= 0.0 {
                continue;
            }
            d2.row_mut(j).scaled_add(a / total, &gi);
            let dalpha = gi.dot(&(&g2.row(j) - &oi)) / total;
            if let Some((_, da, db)) = cosine_grad(g1.row(i), g2.row(j)) {
                d1.row_mut(i).scaled_add(dalpha, &da);
                d2.row_mut(j).scaled_add(dalpha, &db);
            }
        }
    }
    (d1, d2)
}

/// `m_k = cos(W_k ∘ v1, W_k ∘ v2)` for every view row `W_k`.
pub fn multi_view_cosine_match(
    v1: ArrayView1<f64>,
    v2: ArrayView1<f64>,
    views: &Array2<f64>,
) -> Array1<f64> {
    views
        .axis_iter(Axis(0))
        .map(|w| cosine((&w * &v1).view(), (&w * &v2).view()))
        .collect()
}

/// Row-wise [`multi_view_cosine_match`] over two `n × d` matrices.
pub fn multi_view_cosine_rows(
    v1: &Array2<f64>,
    v2: &Array2<f64>,
    views: &Array2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros((v1.nrows(), views.nrows()));
    for i in 0..v1.nrows() {
        out.row_mut(i)
            .assign(&multi_view_cosine_match(v1.row(i), v2.row(i), views));
    }
    out
}

/// Backward of [`multi_view_cosine_rows`]: gradients for `v1`, `v2`, `views`.
pub fn multi_view_cosine_backward(
    v1: &Array2<f64>,
    v2: &Array2<f64>,
    views: &Array2<f64>,
    grad: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut d1 = Array2::zeros(v1.dim());
    let mut d2 = Array2::zeros(v2.dim());
    let mut dw = Array2::zeros(views.dim());
    for i in 0..v1.nrows() {
        let (a, b) = (v1.row(i), v2.row(i));
        for (k, w) in views.axis_iter(Axis(0)).enumerate() {
            let g = grad[[i, k]];
            if g == 0.0 {
                continue;
            }
            let x = &w * &a;
            let y = &w * &b;
            if let Some((_, dx, dy)) = cosine_grad(x.view(), y.view()) {
                d1.row_mut(i).scaled_add(g, &(&w * &dx));
                d2.row_mut(i).scaled_add(g, &(&w * &dy));
                dw.row_mut(k).scaled_add(g, &(&a * &dx + &b * &dy));
            }
        }
    }
    (d1, d2, dw)
}

/// `(ÂH + H) W`: self-inclusive neighbourhood sum followed by a linear map.
pub fn ego_aggregate(
    normalized: &SparseMatrix,
    h: &Array2<f64>,
    w: &Array2<f64>,
) -> Result<Array2<f64>> {
    if h.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "embeddings {:?} with weights {:?}",
            h.dim(),
            w.dim()
        )));
    }
    let agg = normalized.mul_dense(h)? + h;
    Ok(agg.dot(w))
}

/// Weights of one ordered channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    /// `l_views × d` view matrix of the multi-view cosine.
    pub views: Array2<f64>,
    /// GCN#1 layer, `d × d`.
    pub gcn1: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingWeights {
    pub pairs: BTreeMap<(Channel, Channel), PairWeights>,
    /// GCN#2 layer per target channel, `l_views × d`.
    pub gcn2: BTreeMap<Channel, Array2<f64>>,
}

impl MatchingWeights {
    /// Identity GCN layers and all-ones views (`l_views = d`).
    pub fn uniform(d: usize) -> Self {
        let mut pairs = BTreeMap::new();
        for &i in &Channel::ALL {
            for &l in &Channel::ALL {
                if i != l {
                    pairs.insert(
                        (i, l),
                        PairWeights {
                            views: Array2::ones((d, d)),
                            gcn1: Array2::eye(d),
                        },
                    );
                }
            }
        }
        let gcn2 = Channel::ALL.iter().map(|&c| (c, Array2::eye(d))).collect();
        MatchingWeights { pairs, gcn2 }
    }
}

/// Matching vectors before GCN#2 (exposed for inspection and tests).
pub fn matching_vectors(
    hi: &Array2<f64>,
    hl: &Array2<f64>,
    gi: &SparseMatrix,
    gl: &SparseMatrix,
    pair: &PairWeights,
    scope: &AttentionScope,
) -> Result<Array2<f64>> {
    let g1 = ego_aggregate(gi, hi, &pair.gcn1)?;
    let g2 = ego_aggregate(gl, hl, &pair.gcn1)?;
    let trans = cross_attention_transition(&g1, &g2, scope)?;
    Ok(multi_view_cosine_rows(&g1, &trans, &pair.views))
}

/// Transitional matching representation of channel `i` from channel `l`.
pub fn attentive_matching(
    hi: &Array2<f64>,
    hl: &Array2<f64>,
    gi: &SparseMatrix,
    gl: &SparseMatrix,
    pair: &PairWeights,
    gcn2: &Array2<f64>,
    scope: &AttentionScope,
) -> Result<Array2<f64>> {
    let m = matching_vectors(hi, hl, gi, gl, pair, scope)?;
    ego_aggregate(gi, &m, gcn2)
}

/// Fills `bundle.matching` with `H_i^m = Σ_{l≠i} Attm(H_i^n, H_l^n)` and
/// returns the number of `Attm` evaluations.
pub fn matching_representations(
    bundle: &mut ChannelBundle,
    weights: &MatchingWeights,
    scope: &AttentionScope,
) -> Result<usize> {
    let graphs: Vec<ChannelGraph> = bundle.graphs.clone();
    let mut evals = 0;
    let mut out = BTreeMap::new();
    for gi in &graphs {
        let hi = &bundle.common[&gi.channel];
        let mut acc = Array2::zeros(hi.dim());
        for gl in graphs.iter().filter(|g| g.channel != gi.channel) {
            let pair = weights
                .pairs
                .get(&(gi.channel, gl.channel))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no weights for pair {}->{}",
                        gi.channel, gl.channel
                    ))
                })?;
            let gcn2 = &weights.gcn2[&gi.channel];
            acc += &attentive_matching(
                hi,
                &bundle.common[&gl.channel],
                &gi.normalized,
                &gl.normalized,
                pair,
                gcn2,
                scope,
            )?;
            evals += 1;
        }
        out.insert(gi.channel, acc);
    }
    bundle.matching = out;
    Ok(evals)
}
