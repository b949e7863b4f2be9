//! Contrastive, mutual-information and ranking losses against scalar loops.

use std::collections::BTreeMap;

use motifrec::motif::Channel;
use motifrec::rng::{stream, Stream};
use motifrec::sparse::SparseMatrix;
use motifrec::ssl::{self, HmimShuffles, Reduction, ShuffleMap, ShuffleMode, SslConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn random_dense(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::Init);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| a[[i, k]] * b[[j, k]]).sum()
}

fn infonce_oracle(hi: &Array2<f64>, hj: &Array2<f64>, tau: f64) -> f64 {
    let n = hi.nrows();
    let mut total = 0.0;
    for u in 0..n {
        let pos = (dot(hi, u, hj, u) / tau).exp();
        let all: f64 = (0..n).map(|v| (dot(hi, u, hj, v) / tau).exp()).sum();
        total += -(pos / all).ln();
    }
    total / n as f64
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Node/ego and ego/graph discrimination with pinned row permutations.
fn hmim_oracle(h: &Array2<f64>, ego: &Array2<f64>, node_perm: &[usize], ego_perm: &[usize]) -> f64 {
    let (b, d) = h.dim();
    let mut z = Array2::zeros((b, d));
    for u in 0..b {
        for v in 0..b {
            for k in 0..d {
                z[[u, k]] += ego[[u, v]] * h[[v, k]];
            }
        }
    }
    let graph: Vec<f64> = (0..d)
        .map(|k| (0..b).map(|u| h[[u, k]]).sum::<f64>() / b as f64)
        .collect();
    let mut total = 0.0;
    for u in 0..b {
        let local = dot(h, u, &z, u) - dot(h, node_perm[u], &z, u);
        let zg: f64 = (0..d).map(|k| z[[u, k]] * graph[k]).sum();
        let zng: f64 = (0..d).map(|k| z[[ego_perm[u], k]] * graph[k]).sum();
        total -= sigma(local).ln() + sigma(zg - zng).ln();
    }
    total / b as f64
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    ssl::random_derangement(n, &mut stream(seed, Stream::Shuffling))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn infonce_matches_scalar_loop_and_is_positive(n in 2usize..9, d in 1usize..6, tau in 0.05f64..2.0, seed in any::<u64>()) {
        let hi = random_dense(n, d, seed);
        let hj = random_dense(n, d, seed ^ 1);
        let v = ssl::infonce_batch(&hi, &hj, tau).unwrap();
        prop_assert!((v - infonce_oracle(&hi, &hj, tau)).abs() < 1e-10);
        prop_assert!(v > 0.0);
    }

    #[test]
    fn infonce_drops_when_positives_grow(n in 2usize..8, seed in any::<u64>(), boost in 0.1f64..3.0) {
        // with hi = I the logit (u, v) is hj[v, u], so raising hj's diagonal
        // raises the positives alone
        let hi = Array2::<f64>::eye(n);
        let hj = random_dense(n, n, seed);
        let mut boosted = hj.clone();
        for u in 0..n {
            boosted[[u, u]] += boost;
        }
        let before = ssl::infonce_batch(&hi, &hj, 0.5).unwrap();
        let after = ssl::infonce_batch(&hi, &boosted, 0.5).unwrap();
        prop_assert!(after < before);
    }

    #[test]
    fn infonce_survives_large_scale(n in 2usize..6, seed in any::<u64>(), c in 1.0f64..1000.0) {
        let hi = random_dense(n, 3, seed) * c;
        let hj = random_dense(n, 3, seed ^ 4) * c;
        prop_assert!(ssl::infonce_batch(&hi, &hj, 0.01).unwrap().is_finite());
    }

    #[test]
    fn hmim_matches_scalar_loop_with_pinned_shuffles(b in 2usize..7, d in 1usize..5, seed in any::<u64>()) {
        let h = random_dense(b, d, seed);
        let mut rng = stream(seed, Stream::Synthetic);
        let ego = Array2::from_shape_fn((b, b), |(u, v)| if u == v { 1.0 } else if rng.gen_bool(0.4) { rng.gen_range(0.1..1.0) } else { 0.0 });
        let node_perm = permutation(b, seed);
        let ego_perm = permutation(b, seed ^ 8);
        let shuffles = HmimShuffles {
            node: ShuffleMap::from_row_permutation(&node_perm, d),
            ego: ShuffleMap::from_row_permutation(&ego_perm, d),
        };
        let v = ssl::hmim_channel_with(&h, &SparseMatrix::from_dense(&ego), &shuffles, Reduction::Mean).unwrap();
        prop_assert!((v - hmim_oracle(&h, &ego, &node_perm, &ego_perm)).abs() < 1e-10);
    }

    #[test]
    fn triplet_matches_scalar_loop(n in 2usize..8, d in 1usize..5, margin in 0.0f64..2.0, seed in any::<u64>()) {
        let a = random_dense(n, d, seed);
        let b = random_dense(n, d, seed ^ 6);
        let perm = permutation(n, seed);
        let dist = |x: &Array2<f64>, i: usize, y: &Array2<f64>, j: usize| -> f64 {
            (0..d).map(|k| (x[[i, k]] - y[[j, k]]).powi(2)).sum::<f64>().sqrt()
        };
        let expected = (0..n).map(|u| (dist(&a, u, &b, u) - dist(&a, u, &b, perm[u]) + margin).max(0.0)).sum::<f64>() / n as f64;
        prop_assert!((ssl::triplet_pair(&a, &b, &perm, margin).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn joint_loss_is_linear(l_r in -5.0f64..5.0, l1 in -5.0f64..5.0, l2 in -5.0f64..5.0, b1 in 0.0f64..1.0, b2 in 0.0f64..1.0) {
        let cfg = SslConfig { beta1: b1, beta2: b2, ..SslConfig::default() };
        prop_assert!((ssl::joint_loss(l_r, l1, l2, &cfg) - (l_r + b1 * l1 + b2 * l2)).abs() < 1e-10);
    }

    #[test]
    fn row_shuffle_keeps_the_rows(n in 1usize..9, d in 1usize..4, seed in any::<u64>()) {
        let h = random_dense(n, d, seed);
        let out = ssl::shuffle_negatives(&h, ShuffleMode::Row, &mut stream(seed, Stream::Shuffling));
        let key = |m: &Array2<f64>| {
            let mut rows: Vec<Vec<u64>> = m.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            rows.sort();
            rows
        };
        prop_assert_eq!(key(&out), key(&h));
    }
}

#[test]
fn zero_matching_contrast_is_three_log_batch() {
    let b = 5;
    let reps: BTreeMap<Channel, Array2<f64>> = Channel::ALL
        .iter()
        .map(|&c| (c, Array2::zeros((b, 4))))
        .collect();
    let (total, parts) = ssl::cross_channel_contrast(&reps, 0.5).unwrap();
    assert_eq!(parts.len(), 3);
    assert!((total - 3.0 * (b as f64).ln()).abs() < 1e-12);
}

#[test]
fn identical_orthonormal_channels_triple_one_pair() {
    let eye = Array2::<f64>::eye(3);
    let reps: BTreeMap<Channel, Array2<f64>> =
        Channel::ALL.iter().map(|&c| (c, eye.clone())).collect();
    let (total, _) = ssl::cross_channel_contrast(&reps, 0.7).unwrap();
    let single = ssl::infonce_batch(&eye, &eye, 0.7).unwrap();
    assert!((total - 3.0 * single).abs() < 1e-12);
}

#[test]
fn bpr_hand_values() {
    let hu = Array1::from(vec![1.0, 0.0]);
    let qi = Array1::from(vec![1.0, 0.0]);
    let qj = Array1::from(vec![0.0, 1.0]);
    let e = std::f64::consts::E;
    assert!(
        (ssl::bpr_loss(hu.view(), qi.view(), qj.view(), 0.0, 0.0) + (e / (1.0 + e)).ln()).abs()
            < 1e-12
    );
    assert!((ssl::bpr_loss(hu.view(), qi.view(), qi.view(), 0.0, 0.0) - 2f64.ln()).abs() < 1e-12);
}
