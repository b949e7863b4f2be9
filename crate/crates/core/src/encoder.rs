//! Channel encoding by hypergraph propagation, and item representations by
//! averaging over interacting users.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::motif::{Channel, MotifSet};
use crate::sparse::SparseMatrix;

/// Graph operators for one channel, all `n × n`.
#[derive(Debug, Clone)]
pub struct ChannelGraph {
    pub channel: Channel,
    /// Raw motif-count adjacency `A_c`.
    pub adjacency: Arc<SparseMatrix>,
    /// `D̂⁻¹A_c`.
    pub normalized: Arc<SparseMatrix>,
    /// `D̂⁻¹A_c` plus a unit diagonal on zero-degree rows; one propagation step
    /// is a product with this matrix.
    pub propagation: Arc<SparseMatrix>,
    /// `D̂⁻¹A_c + I`: self-inclusive ego-network aggregation.
    pub ego: Arc<SparseMatrix>,
}

impl ChannelGraph {
    pub fn new(channel: Channel, adjacency: SparseMatrix) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::Shape(format!(
                "channel {channel} adjacency is not square"
            )));
        }
        let normalized = adjacency.row_normalize()?;
        let propagation = normalized.with_diagonal_at(&normalized.empty_rows(), 1.0)?;
        let all: Vec<usize> = (0..normalized.n_rows()).collect();
        let ego = normalized.with_diagonal_at(&all, 1.0)?;
        Ok(ChannelGraph {
            channel,
            adjacency: Arc::new(adjacency),
            normalized: Arc::new(normalized),
            propagation: Arc::new(propagation),
            ego: Arc::new(ego),
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n_rows()
    }
}

/// Per-channel operators plus common/matching representations.
#[derive(Debug, Clone)]
pub struct ChannelBundle {
    pub graphs: Vec<ChannelGraph>,
    pub common: BTreeMap<Channel, Array2<f64>>,
    pub matching: BTreeMap<Channel, Array2<f64>>,
    /// Sparse products performed while encoding.
    pub sparse_products: usize,
}

impl ChannelBundle {
    pub fn graph(&self, c: Channel) -> Option<&ChannelGraph> {
        self.graphs.iter().find(|g| g.channel == c)
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.graphs.iter().map(|g| g.channel).collect()
    }
}

/// Builds channel operators for the requested channels.
pub fn channel_graphs(motifs: &MotifSet, channels: &[Channel]) -> Result<Vec<ChannelGraph>> {
    channels
        .iter()
        .map(|&c| ChannelGraph::new(c, motifs.channel(c).clone()))
        .collect()
}

/// One step `out[u] = Σ_v Â[u,v] H[v]`; rows with no neighbours copy `H[u]`.
pub fn propagate_channel(normalized: &SparseMatrix, h: &Array2<f64>) -> Result<Array2<f64>> {
    if normalized.n_cols() != h.nrows() || !normalized.is_square() {
        return Err(Error::Shape(format!(
            "adjacency {:?} with embeddings {:?}",
            normalized.shape(),
            h.dim()
        )));
    }
    let mut out = normalized.mul_dense(h)?;
    for r in normalized.empty_rows() {
        out.row_mut(r).assign(&h.row(r));
    }
    Ok(out)
}

/// Mean of `H⁽⁰⁾..H⁽ᴸ⁾` for each channel, starting from `p0`.
pub fn encode_channels(
    p0: &Array2<f64>,
    graphs: Vec<ChannelGraph>,
    depth: usize,
) -> Result<ChannelBundle> {
    if depth == 0 {
        return Err(Error::Config("encoder depth must be at least 1".into()));
    }
    let mut common = BTreeMap::new();
    let mut products = 0;
    for g in &graphs {
        let mut layer = p0.clone();
        let mut sum = p0.clone();
        for _ in 0..depth {
            layer = g.propagation.mul_dense(&layer)?;
            products += 1;
            sum += &layer;
        }
        common.insert(g.channel, sum / (depth as f64 + 1.0));
    }
    Ok(ChannelBundle {
        graphs,
        common,
        matching: BTreeMap::new(),
        sparse_products: products,
    })
}

/// `D_i⁻¹ Rᵀ`: row `i` averages over the users who interacted with item `i`.
pub fn item_aggregation(ratings: &SparseMatrix) -> Result<SparseMatrix> {
    ratings.binarize().transpose().row_normalize()
}

/// Item representations `Q = D_i⁻¹ Rᵀ H`. Also returns the items with no
/// interactions, whose rows are zero.
pub fn propagate_items(
    ratings: &SparseMatrix,
    h: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let agg = item_aggregation(ratings)?;
    let q = agg.mul_dense(h)?;
    Ok((q, agg.empty_rows()))
}

/// Uniform `[-a, a]` with `a = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..=a))
}
