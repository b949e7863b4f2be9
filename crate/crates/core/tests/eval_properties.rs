//! Ranking metrics against enumeration and scalar references.

use std::collections::HashSet;

use motifrec::data::{dataset_from_pairs, holdout_split};
use motifrec::eval::{self, Scenario};
use motifrec::rng::{stream, Stream};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn scalar_metrics(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> (f64, f64, f64) {
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1.0;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    (hits / k as f64, hits / relevant.len() as f64, dcg / idcg)
}

fn ranking_strategy() -> impl Strategy<Value = (Vec<usize>, HashSet<usize>, usize)> {
    (2usize..15).prop_flat_map(|n| {
        (
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            proptest::collection::hash_set(0..n, 1..=n),
            1..=n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_are_consistent_and_bounded((ranked, relevant, k) in ranking_strategy()) {
        let (p, r, n) = eval::topk_metrics(&ranked, &relevant, k);
        let (ep, er, en) = scalar_metrics(&ranked, &relevant, k);
        prop_assert!((p - ep).abs() < 1e-15 && (r - er).abs() < 1e-15 && (n - en).abs() < 1e-12);
        let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count() as f64;
        prop_assert!((p * k as f64 - hits).abs() < 1e-9);
        prop_assert!((r * relevant.len() as f64 - hits).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        let ideal = ranked.iter().take(k.min(relevant.len())).all(|i| relevant.contains(i));
        prop_assert_eq!(ideal, (n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_below_k_is_irrelevant((ranked, relevant, k) in ranking_strategy(), seed in any::<u64>()) {
        let mut tail = ranked[k..].to_vec();
        rand::seq::SliceRandom::shuffle(tail.as_mut_slice(), &mut stream(seed, Stream::Shuffling));
        let mut other = ranked[..k].to_vec();
        other.extend(tail);
        prop_assert_eq!(eval::topk_metrics(&ranked, &relevant, k), eval::topk_metrics(&other, &relevant, k));
    }

    #[test]
    fn scores_match_scalar_dot_products(m in 1usize..12, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = stream(seed, Stream::Init);
        let items = Array2::from_shape_fn((m, d), |_| rng.gen_range(-1.0..1.0));
        let user = Array2::from_shape_fn((1, d), |_| rng.gen_range(-1.0..1.0));
        let owned: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.3)).collect();
        let scores = eval::predict_scores(user.row(0), &items, &owned);
        for i in 0..m {
            if owned.contains(&i) {
                prop_assert_eq!(scores[i], f64::NEG_INFINITY);
            } else {
                let s: f64 = (0..d).map(|c| user[[0, c]] * items[[i, c]]).sum();
                prop_assert!((scores[i] - s).abs() < 1e-12);
            }
        }
        let top = eval::rank_top_k(scores.as_slice().unwrap(), 3);
        prop_assert!(top.iter().all(|i| !owned.contains(i)));
    }

    #[test]
    fn moving_a_test_item_into_training_never_raises_precision(
        n in 3usize..15, k in 1usize..5, seed in any::<u64>()
    ) {
        let mut rng = stream(seed, Stream::Synthetic);
        let items = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let user = Array2::from_shape_fn((1, 2), |_| rng.gen_range(-1.0..1.0));
        let relevant: HashSet<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        prop_assume!(relevant.len() >= 2);
        let moved = *relevant.iter().min().unwrap();
        let before = eval::rank_top_k(eval::predict_scores(user.row(0), &items, &[]).as_slice().unwrap(), k);
        let after = eval::rank_top_k(eval::predict_scores(user.row(0), &items, &[moved]).as_slice().unwrap(), k);
        let mut remaining = relevant.clone();
        remaining.remove(&moved);
        let (p_before, _, _) = eval::topk_metrics(&before, &relevant, k);
        let (p_after, _, _) = eval::topk_metrics(&after, &remaining, k);
        prop_assert!(p_after <= p_before + 1e-15);
    }
}

#[test]
fn every_ranking_of_six_items_matches_the_oracle() {
    let mut checked = 0;
    let mut perm: Vec<usize> = (0..6).collect();
    let relevant_sets: Vec<HashSet<usize>> = (1u32..64)
        .map(|mask| (0..6).filter(|b| mask & (1 << b) != 0).collect())
        .collect();
    // Heap's algorithm over all 720 orders
    let mut c = [0usize; 6];
    let mut visit = |p: &[usize]| {
        for rel in &relevant_sets {
            assert_eq!(eval::topk_metrics(p, rel, 3), scalar_metrics(p, rel, 3));
        }
        checked += 1;
    };
    visit(&perm);
    let mut i = 0;
    while i < 6 {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    assert_eq!(checked, 720);
}

#[test]
fn perfect_model_recalls_everything() {
    // user u owns item u and will buy item u + n; item vectors point at their buyer
    let n = 12;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| [(u, u), (u, u + n)]).collect();
    let full = dataset_from_pairs(n, 2 * n, &pairs, &[]).unwrap();
    let mut ds = full.clone();
    ds.train_pairs = (0..n).map(|u| (u, u)).collect();
    ds.test_pairs = (0..n).map(|u| (u, u + n)).collect();
    ds.train = motifrec::sparse::SparseMatrix::from_triplets(
        n,
        2 * n,
        ds.train_pairs.iter().map(|&(u, i)| (u, i, 1.0)),
    )
    .unwrap();
    let users = Array2::<f64>::eye(n);
    let items = Array2::from_shape_fn((2 * n, n), |(i, c)| if i % n == c { 1.0 } else { 0.0 });
    let report =
        eval::evaluate_representations(&users, &items, &ds, Scenario::General, 10).unwrap();
    assert_eq!(report.recall_at_k, 1.0);
    assert_eq!(report.ndcg_at_k, 1.0);
    assert_eq!(report.n_users, n);
}

#[test]
fn random_model_recall_is_near_k_over_items() {
    let (n_users, n_items) = (600, 100);
    let mut rng = stream(5, Stream::Synthetic);
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let mut items: Vec<usize> = (0..n_items).collect();
        rand::seq::SliceRandom::shuffle(items.as_mut_slice(), &mut rng);
        pairs.extend(items[..10].iter().map(|&i| (u, i)));
    }
    let full = dataset_from_pairs(n_users, n_items, &pairs, &[]).unwrap();
    let ds = holdout_split(&full, 0.2, &mut stream(5, Stream::Split)).unwrap();
    let users = Array2::from_shape_fn((n_users, 8), |_| rng.gen_range(-1.0..1.0));
    let items = Array2::from_shape_fn((n_items, 8), |_| rng.gen_range(-1.0..1.0));
    let report =
        eval::evaluate_representations(&users, &items, &ds, Scenario::General, 10).unwrap();
    // each user has 8 training items, so 10 of 92 candidates are drawn
    let expected = 10.0 / 92.0;
    assert!(
        (report.recall_at_k - expected).abs() < 0.03,
        "{}",
        report.recall_at_k
    );
}
