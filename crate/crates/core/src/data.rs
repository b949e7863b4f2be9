//! Rating/trust file loading, ID mapping, k-fold splits and the cold-start
//! evaluation subset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Result of reading a trust file.
#[derive(Debug, Clone, Default)]
pub struct TrustFile {
    pub edges: Vec<SocialEdge>,
    pub self_loops: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separator {
    Auto,
    Char(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Whitespace,
    Char(char),
}

fn detect(line: &str) -> Split {
    if line.contains('\t') {
        Split::Char('\t')
    } else if line.contains(',') {
        Split::Char(',')
    } else {
        Split::Whitespace
    }
}

fn fields(line: &str, split: Split) -> Vec<&str> {
    match split {
        Split::Whitespace => line.split_whitespace().collect(),
        Split::Char(c) => line
            .split(c)
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .collect(),
    }
}

/// Yields `(line number, fields)` for every data line of a file.
fn data_lines(path: &Path, separator: Separator) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut split = match separator {
        Separator::Auto => None,
        Separator::Char(c) if c.is_whitespace() && c != '\t' => Some(Split::Whitespace),
        Separator::Char(c) => Some(Split::Char(c)),
    };
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let s = *split.get_or_insert_with(|| detect(line));
        out.push((
            idx + 1,
            fields(line, s).into_iter().map(String::from).collect(),
        ));
    }
    Ok(out)
}

fn parse_weight(path: &Path, line: usize, field: Option<&String>) -> Result<f64> {
    match field {
        None => Ok(1.0),
        Some(f) => {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("invalid number {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite value {f:?}"),
                });
            }
            Ok(v)
        }
    }
}

fn too_short(path: &Path, line: usize, what: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("expected at least two fields ({what})"),
    }
}

/// Reads `user item [rating]` lines; a missing rating defaults to 1.
pub fn load_ratings(
    path: impl AsRef<Path>,
    separator: Separator,
) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    data_lines(path, separator)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() < 2 {
                return Err(too_short(path, line, "user item [rating]"));
            }
            Ok(InteractionRecord {
                user: f[0].clone(),
                item: f[1].clone(),
                rating: parse_weight(path, line, f.get(2))?,
            })
        })
        .collect()
}

/// Reads `src dst [weight]` lines. Self-loops are dropped and counted; a
/// repeated `(src, dst)` keeps the last weight.
pub fn load_trust(path: impl AsRef<Path>) -> Result<TrustFile> {
    let path = path.as_ref();
    let mut out = TrustFile::default();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (line, f) in data_lines(path, Separator::Auto)? {
        if f.len() < 2 {
            return Err(too_short(path, line, "src dst [weight]"));
        }
        let weight = parse_weight(path, line, f.get(2))?;
        if weight <= 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("trust weight must be positive, got {weight}"),
            });
        }
        if f[0] == f[1] {
            out.self_loops += 1;
            continue;
        }
        let key = (f[0].clone(), f[1].clone());
        if let Some(&slot) = seen.get(&key) {
            out.edges[slot].weight = weight;
            out.duplicates += 1;
        } else {
            seen.insert(key, out.edges.len());
            out.edges.push(SocialEdge {
                source: f[0].clone(),
                target: f[1].clone(),
                weight,
            });
        }
    }
    Ok(out)
}

/// Bidirectional external ↔ dense index map, dense IDs in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    to_dense: HashMap<String, usize>,
    to_external: Vec<String>,
}

impl IdMap {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&d) = self.to_dense.get(id) {
            return d;
        }
        let d = self.to_external.len();
        self.to_dense.insert(id.to_string(), d);
        self.to_external.push(id.to_string());
        d
    }

    pub fn dense(&self, id: &str) -> Option<usize> {
        self.to_dense.get(id).copied()
    }

    pub fn external(&self, dense: usize) -> &str {
        &self.to_external[dense]
    }

    pub fn len(&self) -> usize {
        self.to_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_external.is_empty()
    }
}

/// Counters collected while assembling a dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct BuildReport {
    pub records: usize,
    pub duplicate_records: usize,
    pub edges: usize,
    pub dropped_edges_unknown_user: usize,
    pub self_loops: usize,
    pub duplicate_edges: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    pub user_ids: IdMap,
    pub item_ids: IdMap,
    /// Raw `(user, item, rating)` triples after ID mapping, file order.
    pub ratings: Vec<(usize, usize, f64)>,
    /// Binary training interactions, `n_users × n_items`.
    pub train: SparseMatrix,
    /// Directed social graph over rated users, `n_users × n_users`.
    pub social: SparseMatrix,
    pub train_pairs: Vec<(usize, usize)>,
    pub test_pairs: Vec<(usize, usize)>,
    /// Users whose test items are scored; `None` means every user.
    pub eval_users: Option<Vec<bool>>,
    /// Users whose test pairs were dropped because their train part is empty.
    pub excluded_empty_train: usize,
    pub report: BuildReport,
}

fn binary_matrix(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> SparseMatrix {
    SparseMatrix::from_triplets(n_users, n_items, pairs.iter().map(|&(u, i)| (u, i, 1.0)))
        .expect("pairs use dense indices")
        .binarize()
}

/// Assembles the ID-mapped dataset with every interaction in training.
pub fn build_dataset(records: &[InteractionRecord], trust: &TrustFile) -> Result<Dataset> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut ratings = Vec::with_capacity(records.len());
    let mut pairs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut report = BuildReport {
        records: records.len(),
        self_loops: trust.self_loops,
        duplicate_edges: trust.duplicates,
        ..Default::default()
    };
    for rec in records {
        let u = users.intern(&rec.user);
        let i = items.intern(&rec.item);
        ratings.push((u, i, rec.rating));
        if seen.insert((u, i)) {
            pairs.push((u, i));
        } else {
            report.duplicate_records += 1;
        }
    }
    if users.is_empty() || items.is_empty() {
        return Err(Error::EmptyDataset("no users or items in ratings".into()));
    }
    let mut edges = Vec::new();
    for e in &trust.edges {
        match (users.dense(&e.source), users.dense(&e.target)) {
            (Some(a), Some(b)) => edges.push((a, b, e.weight)),
            _ => report.dropped_edges_unknown_user += 1,
        }
    }
    report.edges = edges.len();
    let (n_users, n_items) = (users.len(), items.len());
    // duplicates were resolved in the trust loader, so summing is a no-op
    let social = SparseMatrix::from_triplets(n_users, n_users, edges)?;
    Ok(Dataset {
        n_users,
        n_items,
        user_ids: users,
        item_ids: items,
        ratings,
        train: binary_matrix(n_users, n_items, &pairs),
        social,
        train_pairs: pairs,
        test_pairs: Vec::new(),
        eval_users: None,
        excluded_empty_train: 0,
        report,
    })
}

/// Builds a dataset directly from dense-indexed pairs (synthetic data, tests).
/// External IDs are the decimal indices, so dense and given indices agree.
pub fn dataset_from_pairs(
    n_users: usize,
    n_items: usize,
    pairs: &[(usize, usize)],
    social_edges: &[(usize, usize)],
) -> Result<Dataset> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::EmptyDataset("no users or items".into()));
    }
    let mut user_ids = IdMap::default();
    let mut item_ids = IdMap::default();
    for u in 0..n_users {
        user_ids.intern(&u.to_string());
    }
    for i in 0..n_items {
        item_ids.intern(&i.to_string());
    }
    let mut seen = std::collections::HashSet::new();
    let mut unique = Vec::new();
    let mut report = BuildReport {
        records: pairs.len(),
        ..Default::default()
    };
    for &(u, i) in pairs {
        if u >= n_users || i >= n_items {
            return Err(Error::Shape(format!(
                "pair ({u}, {i}) outside {n_users}x{n_items}"
            )));
        }
        if seen.insert((u, i)) {
            unique.push((u, i));
        } else {
            report.duplicate_records += 1;
        }
    }
    let mut edges = std::collections::BTreeMap::new();
    for &(a, b) in social_edges {
        if a == b {
            report.self_loops += 1;
        } else if edges.insert((a, b), 1.0).is_some() {
            report.duplicate_edges += 1;
        }
    }
    report.edges = edges.len();
    let social = SparseMatrix::from_triplets(
        n_users,
        n_users,
        edges.into_iter().map(|((a, b), w)| (a, b, w)),
    )?;
    Ok(Dataset {
        n_users,
        n_items,
        user_ids,
        item_ids,
        ratings: unique.iter().map(|&(u, i)| (u, i, 1.0)).collect(),
        train: binary_matrix(n_users, n_items, &unique),
        social,
        train_pairs: unique,
        test_pairs: Vec::new(),
        eval_users: None,
        excluded_empty_train: 0,
        report,
    })
}

impl Dataset {
    /// Every distinct interaction, train and test.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        let mut all = self.train_pairs.clone();
        all.extend_from_slice(&self.test_pairs);
        all
    }

    /// Sorted training items per user.
    pub fn user_train_items(&self) -> Vec<Vec<usize>> {
        (0..self.n_users)
            .map(|u| self.train.row(u).0.to_vec())
            .collect()
    }

    /// Test items per user (ordered map for deterministic iteration).
    pub fn user_test_items(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(u, i) in &self.test_pairs {
            out.entry(u).or_default().push(i);
        }
        for v in out.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    pub fn is_eval_user(&self, u: usize) -> bool {
        self.eval_users.as_ref().is_none_or(|m| m[u])
    }

    pub fn density(&self) -> f64 {
        let total = self.train_pairs.len() + self.test_pairs.len();
        total as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    /// Copy of this dataset with a new train/test partition.
    fn with_partition(
        &self,
        train_pairs: Vec<(usize, usize)>,
        test_pairs: Vec<(usize, usize)>,
    ) -> Dataset {
        let train = binary_matrix(self.n_users, self.n_items, &train_pairs);
        let mut has_train = vec![false; self.n_users];
        for &(u, _) in &train_pairs {
            has_train[u] = true;
        }
        let mut excluded = std::collections::BTreeSet::new();
        let test_pairs = test_pairs
            .into_iter()
            .filter(|&(u, _)| {
                if has_train[u] {
                    true
                } else {
                    excluded.insert(u);
                    false
                }
            })
            .collect();
        Dataset {
            train,
            train_pairs,
            test_pairs,
            eval_users: self.eval_users.clone(),
            excluded_empty_train: excluded.len(),
            ..self.clone()
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            n_users: self.n_users,
            n_items: self.n_items,
            n_interactions: self.train_pairs.len() + self.test_pairs.len(),
            n_train: self.train_pairs.len(),
            n_test: self.test_pairs.len(),
            n_relations: self.social.nnz(),
            density: self.density(),
            n_eval_users: self
                .eval_users
                .as_ref()
                .map(|m| m.iter().filter(|&&b| b).count()),
            excluded_empty_train: self.excluded_empty_train,
            report: self.report.clone(),
        }
    }
}

/// JSON-serialisable dataset overview.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_relations: usize,
    pub density: f64,
    pub n_eval_users: Option<usize>,
    pub excluded_empty_train: usize,
    pub report: BuildReport,
}

/// Partitions every interaction into `k` folds; fold `f` becomes the test
/// part of the `f`-th returned dataset.
///
/// Users are visited in a random order and each user's interactions are
/// shuffled, then dealt round-robin from a running cursor. A user with at
/// least `k` interactions therefore lands in every fold, and fold sizes
/// differ by at most one.
pub fn split_kfold<R: Rng>(dataset: &Dataset, k: usize, rng: &mut R) -> Result<Vec<Dataset>> {
    let all = dataset.all_pairs();
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > all.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} available interactions",
            all.len()
        )));
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users];
    for &(u, i) in &all {
        per_user[u].push(i);
    }
    let mut order: Vec<usize> = (0..dataset.n_users).collect();
    order.shuffle(rng);
    let mut folds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for u in order {
        let mut items = per_user[u].clone();
        items.sort_unstable();
        items.shuffle(rng);
        for i in items {
            folds[cursor % k].push((u, i));
            cursor += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let train: Vec<_> = (0..k)
                .filter(|&g| g != f)
                .flat_map(|g| folds[g].iter().copied())
                .collect();
            dataset.with_partition(train, folds[f].clone())
        })
        .collect())
}

/// Holds out `test_fraction` of the interactions as the test split (the
/// first fold of a `round(1/test_fraction)`-fold split).
pub fn holdout_split<R: Rng>(
    dataset: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let k = (1.0 / test_fraction).round().max(2.0) as usize;
    Ok(split_kfold(dataset, k, rng)?.swap_remove(0))
}

/// Restricts evaluation to users with fewer than `threshold` interactions
/// in total (train + test). Training data is untouched.
pub fn filter_cold_start(dataset: &Dataset, threshold: usize) -> Dataset {
    let mut counts = vec![0usize; dataset.n_users];
    for (u, _) in dataset.all_pairs() {
        counts[u] += 1;
    }
    let mask: Vec<bool> = (0..dataset.n_users)
        .map(|u| counts[u] < threshold && dataset.is_eval_user(u))
        .collect();
    Dataset {
        eval_users: Some(mask),
        ..dataset.clone()
    }
}
