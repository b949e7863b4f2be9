//! Loss functions: in-batch InfoNCE across channels, hierarchical mutual
//! information (node ↔ ego-network ↔ graph) within a channel, BPR, the joint
//! objective and the direct cross-channel contrast used for ablations.
//!
//! Everything here is a plain function of its inputs. Randomness (negative
//! shuffles) enters only through explicit [`ShuffleMap`]s or an injected RNG.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motif::Channel;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleMode {
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectContrast {
    #[default]
    Off,
    Triplet,
    Infonce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_reg: f64,
    pub shuffle_mode: ShuffleMode,
    pub reduction: Reduction,
    /// Hinge margin of the triplet ablation.
    pub margin: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            tau: 0.5,
            beta1: 0.01,
            beta2: 0.001,
            lambda_reg: 0.03,
            shuffle_mode: ShuffleMode::Row,
            reduction: Reduction::Mean,
            margin: 1.0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.beta1 < 0.0 || self.beta2 < 0.0 || self.lambda_reg < 0.0 {
            return Err(Error::Config(
                "beta1, beta2 and lambda_reg must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step loss components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_r: f64,
    pub l_s11: f64,
    pub l_s12: f64,
    pub l_1: f64,
    pub l_2: f64,
    pub total: f64,
    /// InfoNCE term per channel pair, e.g. `"s-j"`.
    pub infonce_pairs: BTreeMap<String, f64>,
    pub hmim_matching: BTreeMap<Channel, f64>,
    pub hmim_common: BTreeMap<Channel, f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "contrast between {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// In-batch InfoNCE: row `u` of `hi` against every row of `hj`, with the
/// same row as the positive. Mean over rows.
pub fn infonce_batch(hi: &Array2<f64>, hj: &Array2<f64>, tau: f64) -> Result<f64> {
    check_pair(hi, hj)?;
    let logits = hi.dot(&hj.t()) / tau;
    let n = logits.nrows();
    let total: f64 = (0..n)
        .map(|u| {
            let row = logits.row(u);
            log_sum_exp(row.iter().copied()) - row[u]
        })
        .sum();
    Ok(total / n as f64)
}

/// Gradients of [`infonce_batch`] with respect to both inputs, scaled by `g`.
pub fn infonce_backward(
    hi: &Array2<f64>,
    hj: &Array2<f64>,
    tau: f64,
    g: f64,
) -> (Array2<f64>, Array2<f64>) {
    let mut logits = hi.dot(&hj.t()) / tau;
    let n = logits.nrows();
    for u in 0..n {
        let mut row = logits.row_mut(u);
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|x| (x - lse).exp());
        row[u] -= 1.0;
    }
    logits *= g / (n as f64 * tau);
    (logits.dot(hj), logits.t().dot(hi))
}

pub fn pair_label(a: Channel, b: Channel) -> String {
    format!("{}-{}", a.short_name(), b.short_name())
}

/// Channel pairs contrasted with each other: `(s,j)`, `(s,p)`, `(p,j)`,
/// restricted to the channels present.
pub fn contrast_pairs(channels: &[Channel]) -> Vec<(Channel, Channel)> {
    [
        (Channel::Social, Channel::Joint),
        (Channel::Social, Channel::Purchase),
        (Channel::Purchase, Channel::Joint),
    ]
    .into_iter()
    .filter(|(a, b)| channels.contains(a) && channels.contains(b))
    .collect()
}

/// Sum of pairwise InfoNCE terms over the contrasted channel pairs.
pub fn cross_channel_contrast(
    reps: &BTreeMap<Channel, Array2<f64>>,
    tau: f64,
) -> Result<(f64, BTreeMap<String, f64>)> {
    let channels: Vec<Channel> = reps.keys().copied().collect();
    let mut parts = BTreeMap::new();
    let mut total = 0.0;
    for (a, b) in contrast_pairs(&channels) {
        let v = infonce_batch(&reps[&a], &reps[&b], tau)?;
        parts.insert(pair_label(a, b), v);
        total += v;
    }
    Ok((total, parts))
}

/// Flat index map: `out.flat[k] = input.flat[map[k]]` (row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleMap {
    pub rows: usize,
    pub cols: usize,
    pub map: Vec<usize>,
}

impl ShuffleMap {
    pub fn identity(rows: usize, cols: usize) -> Self {
        ShuffleMap {
            rows,
            cols,
            map: (0..rows * cols).collect(),
        }
    }

    /// Whole rows moved: output row `i` is input row `perm[i]`.
    pub fn from_row_permutation(perm: &[usize], cols: usize) -> Self {
        let map = perm
            .iter()
            .flat_map(|&src| (0..cols).map(move |c| src * cols + c))
            .collect();
        ShuffleMap {
            rows: perm.len(),
            cols,
            map,
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let flat: Vec<f64> = x.iter().copied().collect();
        Array2::from_shape_vec(
            (self.rows, self.cols),
            self.map.iter().map(|&k| flat[k]).collect(),
        )
        .expect("shuffle map shape")
    }

    /// Adjoint of [`ShuffleMap::apply`]: scatter-add back to input positions.
    pub fn apply_adjoint(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (k, v) in g.iter().enumerate() {
            out[self.map[k]] += v;
        }
        Array2::from_shape_vec((self.rows, self.cols), out).expect("shuffle map shape")
    }
}

/// A random permutation of `0..n`, without fixed points when `n ≥ 2`.
pub fn random_derangement<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    for _ in 0..100 {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
    // Sattolo's algorithm: a single n-cycle, hence fixed-point free
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    perm
}

pub fn shuffle_map<R: Rng>(rows: usize, cols: usize, mode: ShuffleMode, rng: &mut R) -> ShuffleMap {
    match mode {
        ShuffleMode::Row => ShuffleMap::from_row_permutation(&random_derangement(rows, rng), cols),
        ShuffleMode::Column => {
            let mut map = vec![0; rows * cols];
            for c in 0..cols {
                let mut perm: Vec<usize> = (0..rows).collect();
                perm.shuffle(rng);
                for (r, &src) in perm.iter().enumerate() {
                    map[r * cols + c] = src * cols + c;
                }
            }
            ShuffleMap { rows, cols, map }
        }
    }
}

/// Corrupted copy of `h` used as negatives.
pub fn shuffle_negatives<R: Rng>(h: &Array2<f64>, mode: ShuffleMode, rng: &mut R) -> Array2<f64> {
    shuffle_map(h.nrows(), h.ncols(), mode, rng).apply(h)
}

/// Shuffles used by one hierarchical-MI evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HmimShuffles {
    pub node: ShuffleMap,
    pub ego: ShuffleMap,
}

impl HmimShuffles {
    pub fn sample<R: Rng>(rows: usize, cols: usize, mode: ShuffleMode, rng: &mut R) -> Self {
        HmimShuffles {
            node: shuffle_map(rows, cols, mode, rng),
            ego: shuffle_map(rows, cols, mode, rng),
        }
    }
}

/// Hierarchical mutual-information loss of one channel over a batch.
///
/// `ego` is the batch-local `b × b` ego-network weight matrix (neighbour
/// weights plus the node itself), so `z = ego · h`. The graph summary is the
/// mean batch row. Scores are dot products:
///
/// `-Σ_u [log σ(h_u·z_u − h̃_u·z_u) + log σ(z_u·ẑ − z̃_u·ẑ)]`
pub fn hmim_channel_with(
    h: &Array2<f64>,
    ego: &SparseMatrix,
    shuffles: &HmimShuffles,
    reduction: Reduction,
) -> Result<f64> {
    let b = h.nrows();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if ego.shape() != (b, b) {
        return Err(Error::Shape(format!(
            "ego weights {:?} for batch {b}",
            ego.shape()
        )));
    }
    let z = ego.mul_dense(h)?;
    let h_neg = shuffles.node.apply(h);
    let z_neg = shuffles.ego.apply(&z);
    let graph = h.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut total = 0.0;
    for u in 0..b {
        let zu = z.row(u);
        let local = h.row(u).dot(&zu) - h_neg.row(u).dot(&zu);
        let global = zu.dot(&graph) - z_neg.row(u).dot(&graph);
        total -= log_sigmoid(local) + log_sigmoid(global);
    }
    Ok(match reduction {
        Reduction::Mean => total / b as f64,
        Reduction::Sum => total,
    })
}

/// [`hmim_channel_with`] drawing its shuffles from `rng`.
pub fn hmim_channel<R: Rng>(
    h: &Array2<f64>,
    ego: &SparseMatrix,
    cfg: &SslConfig,
    rng: &mut R,
) -> Result<f64> {
    let shuffles = HmimShuffles::sample(h.nrows(), h.ncols(), cfg.shuffle_mode, rng);
    hmim_channel_with(h, ego, &shuffles, cfg.reduction)
}

/// Auxiliary task 1: cross-channel InfoNCE plus per-channel hierarchical MI,
/// both on matching representations. Returns `(l_s11, l_s12)`.
pub fn aux1_loss<R: Rng>(
    matching: &BTreeMap<Channel, Array2<f64>>,
    ego: &BTreeMap<Channel, SparseMatrix>,
    cfg: &SslConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (s11, _) = cross_channel_contrast(matching, cfg.tau)?;
    let mut s12 = 0.0;
    for (c, h) in matching {
        s12 += hmim_channel(h, &ego[c], cfg, rng)?;
    }
    Ok((s11, s12))
}

/// Auxiliary task 2: hierarchical MI on the common representations.
pub fn aux2_loss<R: Rng>(
    common: &BTreeMap<Channel, Array2<f64>>,
    ego: &BTreeMap<Channel, SparseMatrix>,
    cfg: &SslConfig,
    rng: &mut R,
) -> Result<f64> {
    common
        .iter()
        .map(|(c, h)| hmim_channel(h, &ego[c], cfg, rng))
        .sum()
}

/// One BPR triple: `−log σ(h_u·q_i − h_u·q_j) + λ·reg_sq`, where `reg_sq` is
/// the squared norm of the embeddings the triple touches.
pub fn bpr_loss(
    hu: ArrayView1<f64>,
    qi: ArrayView1<f64>,
    qj: ArrayView1<f64>,
    reg_sq: f64,
    lambda: f64,
) -> f64 {
    -log_sigmoid(hu.dot(&qi) - hu.dot(&qj)) + lambda * reg_sq
}

/// `L = l_r + β₁ l_1 + β₂ l_2`.
pub fn joint_loss(l_r: f64, l_1: f64, l_2: f64, cfg: &SslConfig) -> f64 {
    l_r + cfg.beta1 * l_1 + cfg.beta2 * l_2
}

fn row_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d: Array1<f64> = &a - &b;
    d.dot(&d).sqrt()
}

/// Triplet hinge between two channels with row-shuffled negatives.
pub fn triplet_pair(a: &Array2<f64>, b: &Array2<f64>, perm: &[usize], margin: f64) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.nrows();
    let total: f64 = (0..n)
        .map(|u| {
            (row_distance(a.row(u), b.row(u)) - row_distance(a.row(u), b.row(perm[u])) + margin)
                .max(0.0)
        })
        .sum();
    Ok(total / n as f64)
}

/// Contrast applied directly to the common channel representations.
/// `perms` supplies one negative permutation per contrasted pair (triplet mode).
pub fn direct_contrast_loss(
    common: &BTreeMap<Channel, Array2<f64>>,
    mode: DirectContrast,
    tau: f64,
    margin: f64,
    perms: &[Vec<usize>],
) -> Result<f64> {
    match mode {
        DirectContrast::Off => Ok(0.0),
        DirectContrast::Infonce => Ok(cross_channel_contrast(common, tau)?.0),
        DirectContrast::Triplet => {
            let channels: Vec<Channel> = common.keys().copied().collect();
            let pairs = contrast_pairs(&channels);
            if perms.len() < pairs.len() {
                return Err(Error::Shape(format!(
                    "{} permutations for {} pairs",
                    perms.len(),
                    pairs.len()
                )));
            }
            pairs
                .iter()
                .zip(perms)
                .map(|((x, y), p)| triplet_pair(&common[x], &common[y], p, margin))
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infonce_single_row_is_zero() {
        let h = array![[0.3, -1.2]];
        assert_eq!(infonce_batch(&h, &h, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn infonce_identity_closed_form() {
        let e = std::f64::consts::E;
        let v = infonce_batch(&Array2::eye(2), &Array2::eye(2), 1.0).unwrap();
        assert_abs_diff_eq!(v, -(e / (e + 1.0)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn infonce_empty_batch() {
        assert!(infonce_batch(&Array2::zeros((0, 2)), &Array2::zeros((0, 2)), 1.0).is_err());
    }

    #[test]
    fn hmim_batch_of_one() {
        let h = array![[0.4, 1.0, -0.3]];
        let ego = SparseMatrix::identity(1);
        let v = hmim_channel_with(
            &h,
            &ego,
            &HmimShuffles {
                node: ShuffleMap::identity(1, 3),
                ego: ShuffleMap::identity(1, 3),
            },
            Reduction::Mean,
        )
        .unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bpr_examples() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_abs_diff_eq!(
            bpr_loss(a.view(), a.view(), a.view(), 0.0, 0.0),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            bpr_loss(a.view(), a.view(), b.view(), 0.0, 0.0),
            0.313262,
            epsilon = 1e-6
        );
        let big = array![1e6, 0.0];
        assert_abs_diff_eq!(
            bpr_loss(big.view(), a.view(), b.view(), 2.0, 0.5),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn joint_weights() {
        let cfg = SslConfig::default();
        assert_abs_diff_eq!(joint_loss(1.0, 2.0, 3.0, &cfg), 1.023, epsilon = 1e-15);
        let off = SslConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..cfg
        };
        assert_eq!(joint_loss(0.7, 5.0, 9.0, &off), 0.7);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..40 {
            let p = random_derangement(n, &mut rng);
            assert!(p.iter().enumerate().all(|(i, &x)| i != x));
        }
        assert_eq!(random_derangement(1, &mut rng), vec![0]);
    }

    #[test]
    fn shuffle_is_reproducible_and_preserves_rows() {
        let h = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64);
        let a = shuffle_negatives(&h, ShuffleMode::Row, &mut ChaCha8Rng::seed_from_u64(5));
        let b = shuffle_negatives(&h, ShuffleMode::Row, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let mut rows_in: Vec<Vec<u64>> = h
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect();
        let mut rows_out: Vec<Vec<u64>> = a
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect();
        rows_in.sort();
        rows_out.sort();
        assert_eq!(rows_in, rows_out);
        let one = array![[1.0, 2.0]];
        assert_eq!(
            shuffle_negatives(&one, ShuffleMode::Row, &mut ChaCha8Rng::seed_from_u64(0)),
            one
        );
        let col = shuffle_negatives(&h, ShuffleMode::Column, &mut ChaCha8Rng::seed_from_u64(1));
        for c in 0..3 {
            let mut x: Vec<f64> = col.column(c).to_vec();
            x.sort_by(f64::total_cmp);
            assert_eq!(x, h.column(c).to_vec());
        }
    }

    #[test]
    fn triplet_inactive_when_positives_closer() {
        let a = array![[0.0, 0.0], [10.0, 10.0]];
        let b = array![[0.1, 0.0], [10.0, 10.1]];
        assert_eq!(triplet_pair(&a, &b, &[1, 0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_abs_diff_eq!(log_sigmoid(0.0), -2f64.ln(), epsilon = 1e-15);
        assert!(log_sigmoid(-1e4).is_finite());
        assert_eq!(log_sigmoid(1e4), 0.0);
    }

    #[test]
    fn tau_validation() {
        assert!(SslConfig {
            tau: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
