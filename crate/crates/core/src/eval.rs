//! Top-K ranking evaluation and cross-validated reporting.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::rng::{child_seed, stream, Stream};
use crate::ssl::SslConfig;
use crate::train::{self, TrainConfig};

/// Interaction count below which a user counts as cold-start.
pub const COLD_START_THRESHOLD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    General,
    ColdStart,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Scenario::General),
            "cold_start" => Ok(Scenario::ColdStart),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::General => "general",
            Scenario::ColdStart => "cold_start",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub k: usize,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub n_users: usize,
    /// Eligible users skipped because they have no test items.
    pub excluded_users: usize,
    pub per_user: Vec<UserMetrics>,
}

/// `r̂_u = Q h_u`, with the user's training items set to `-∞`.
pub fn predict_scores(h_u: ArrayView1<f64>, items: &Array2<f64>, owned: &[usize]) -> Array1<f64> {
    let mut scores = items.dot(&h_u);
    for &i in owned {
        scores[i] = f64::NEG_INFINITY;
    }
    scores
}

/// Indices of the `k` highest finite scores; ties go to the lower index.
pub fn rank_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] != f64::NEG_INFINITY)
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if idx.len() > k {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// `(P@k, R@k, NDCG@k)` of a ranking against a non-empty relevant set, with
/// binary gains and the ideal DCG truncated at `min(k, |relevant|)`.
pub fn topk_metrics(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> (f64, f64, f64) {
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let mut hits = 0;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += discount(pos);
        }
    }
    let idcg: f64 = (0..k.min(relevant.len())).map(discount).sum();
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    (
        hits as f64 / k as f64,
        hits as f64 / relevant.len() as f64,
        ndcg,
    )
}

/// Evaluates fixed user/item representations on `dataset`'s test split.
pub fn evaluate_representations(
    users: &Array2<f64>,
    items: &Array2<f64>,
    dataset: &Dataset,
    scenario: Scenario,
    k: usize,
) -> Result<MetricsReport> {
    if users.nrows() != dataset.n_users || items.nrows() != dataset.n_items {
        return Err(Error::Shape(format!(
            "representations for {} users / {} items, dataset has {} / {}",
            users.nrows(),
            items.nrows(),
            dataset.n_users,
            dataset.n_items
        )));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let filtered;
    let ds = match scenario {
        Scenario::General => dataset,
        Scenario::ColdStart => {
            filtered = data::filter_cold_start(dataset, COLD_START_THRESHOLD);
            &filtered
        }
    };
    let owned = ds.user_train_items();
    let tests = ds.user_test_items();
    let eligible: Vec<usize> = (0..ds.n_users).filter(|&u| ds.is_eval_user(u)).collect();
    let evaluated: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|u| tests.contains_key(u))
        .collect();
    let per_user: Vec<UserMetrics> = evaluated
        .par_iter()
        .map(|&u| {
            let scores = predict_scores(users.row(u), items, &owned[u]);
            let ranked = rank_top_k(scores.as_slice().expect("contiguous"), k);
            let relevant: HashSet<usize> = tests[&u].iter().copied().collect();
            let (precision, recall, ndcg) = topk_metrics(&ranked, &relevant, k);
            UserMetrics {
                user: u,
                precision,
                recall,
                ndcg,
            }
        })
        .collect();
    let n = per_user.len();
    let mean = |f: fn(&UserMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_user.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(MetricsReport {
        scenario,
        k,
        precision_at_k: mean(|m| m.precision),
        recall_at_k: mean(|m| m.recall),
        ndcg_at_k: mean(|m| m.ndcg),
        n_users: n,
        excluded_users: eligible.len() - n,
        per_user,
    })
}

/// Metric triple without the per-user detail.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

impl From<&MetricsReport> for MetricSummary {
    fn from(r: &MetricsReport) -> Self {
        MetricSummary {
            precision: r.precision_at_k,
            recall: r.recall_at_k,
            ndcg: r.ndcg_at_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub best_epoch: usize,
    pub metrics: MetricSummary,
    pub n_users: usize,
}

/// Folds × repeats aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub scenario: Scenario,
    pub k: usize,
    pub folds: usize,
    pub repeats: usize,
    pub runs: Vec<FoldResult>,
    pub mean: MetricSummary,
    /// Population standard deviation over runs.
    pub std: MetricSummary,
    /// Run with the highest Recall@k.
    pub best: MetricSummary,
}

/// Aggregates run results into mean, standard deviation and best-of.
pub fn aggregate(
    scenario: Scenario,
    k: usize,
    folds: usize,
    repeats: usize,
    runs: Vec<FoldResult>,
) -> CrossValidationReport {
    let n = runs.len().max(1) as f64;
    // shifted by the first run so identical runs give exactly zero spread
    let stat = |f: fn(&MetricSummary) -> f64| {
        let origin = runs.first().map_or(0.0, |r| f(&r.metrics));
        let shift = runs.iter().map(|r| f(&r.metrics) - origin).sum::<f64>() / n;
        let var = runs
            .iter()
            .map(|r| (f(&r.metrics) - origin - shift).powi(2))
            .sum::<f64>()
            / n;
        (origin + shift, var.sqrt())
    };
    let (pm, ps) = stat(|m| m.precision);
    let (rm, rs) = stat(|m| m.recall);
    let (nm, ns) = stat(|m| m.ndcg);
    let best = runs
        .iter()
        .map(|r| r.metrics)
        .max_by(|a, b| a.recall.total_cmp(&b.recall))
        .unwrap_or_default();
    CrossValidationReport {
        scenario,
        k,
        folds,
        repeats,
        runs,
        mean: MetricSummary {
            precision: pm,
            recall: rm,
            ndcg: nm,
        },
        std: MetricSummary {
            precision: ps,
            recall: rs,
            ndcg: ns,
        },
        best,
    }
}

/// Trains and evaluates on every fold of `repeats` independent k-fold splits.
/// Each repeat draws its split and training seed from `cfg.seed`.
pub fn cross_validate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    ssl: &SslConfig,
    folds: usize,
    repeats: usize,
    scenario: Scenario,
) -> Result<CrossValidationReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut runs = Vec::new();
    for repeat in 0..repeats {
        let seed = child_seed(cfg.seed, repeat as u64);
        let splits = data::split_kfold(dataset, folds, &mut stream(seed, Stream::Split))?;
        for (fold, split) in splits.iter().enumerate() {
            let run_cfg = TrainConfig {
                seed: child_seed(seed, fold as u64),
                ..cfg.clone()
            };
            let outcome = train::train(split, &run_cfg, ssl)?;
            let report = outcome.evaluate(split, scenario, cfg.eval_k)?;
            runs.push(FoldResult {
                repeat,
                fold,
                best_epoch: outcome.best_epoch,
                metrics: MetricSummary::from(&report),
                n_users: report.n_users,
            });
        }
    }
    Ok(aggregate(scenario, cfg.eval_k, folds, repeats, runs))
}

/// Writes `scenario,k,metric,mean,std,n_users` rows.
pub fn write_metrics_csv(report: &CrossValidationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n_users = report.runs.iter().map(|r| r.n_users).max().unwrap_or(0);
    let mut out = String::from("scenario,k,metric,mean,std,n_users\n");
    for (name, mean, std) in [
        ("precision", report.mean.precision, report.std.precision),
        ("recall", report.mean.recall, report.std.recall),
        ("ndcg", report.mean.ndcg, report.std.ndcg),
    ] {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.scenario, report.k, name, mean, std, n_users
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes one metrics report as a single-run CSV.
pub fn write_report_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let run = FoldResult {
        repeat: 0,
        fold: 0,
        best_epoch: 0,
        metrics: MetricSummary::from(report),
        n_users: report.n_users,
    };
    write_metrics_csv(&aggregate(report.scenario, report.k, 1, 1, vec![run]), path)
}

/// Per-user metric dump: `user_id,precision,recall,ndcg`.
pub fn write_per_user_csv(
    report: &MetricsReport,
    dataset: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "user_id,precision,recall,ndcg")?;
        for m in &report.per_user {
            writeln!(
                f,
                "{},{},{},{}",
                dataset.user_ids.external(m.user),
                m.precision,
                m.recall,
                m.ndcg
            )?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
