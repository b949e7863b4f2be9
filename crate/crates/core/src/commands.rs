//! The `train`, `eval`, `motifs` and `sweep` subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Manifest, RunConfig};
use crate::data::{self, Dataset, TrustFile};
use crate::error::{Error, Result};
use crate::eval::{self, MetricSummary, MetricsReport, Scenario};
use crate::fusion;
use crate::io;
use crate::model::{self, ModelContext};
use crate::motif;
use crate::rng::{stream, Stream};
use crate::synthetic;
use crate::train::{self, TrainConfig};

/// Loads the configured data (or generates the planted dataset) without
/// splitting it.
pub fn load_full_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.ratings {
        Some(ratings) => {
            let records = data::load_ratings(ratings, cfg.separator()?)?;
            let trust = match &cfg.trust {
                Some(t) => data::load_trust(t)?,
                None => TrustFile::default(),
            };
            data::build_dataset(&records, &trust)
        }
        None => Ok(synthetic::planted_blocks(&cfg.synthetic, cfg.train.seed)?.dataset),
    }
}

/// The train/test split used by `train` and `eval`, fixed by `seed`.
pub fn load_split(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    let full = load_full_dataset(cfg)?;
    data::holdout_split(
        &full,
        cfg.eval.test_fraction,
        &mut stream(seed, Stream::Split),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Paths written by [`cmd_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub metrics_json: PathBuf,
    pub metrics_csv: PathBuf,
    pub attention: PathBuf,
    pub manifest: PathBuf,
    pub cross_validation: Option<PathBuf>,
    pub best_epoch: usize,
    pub metrics: MetricSummary,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let dataset = load_split(cfg, cfg.train.seed)?;

    let log_path = out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    );
    let outcome = train::train_with_log(&dataset, &cfg.train, &cfg.ssl, |entry| {
        writeln!(log, "{}", serde_json::to_string(entry)?).map_err(|e| Error::io(&log_path, e))
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let checkpoint = out.join("checkpoint");
    io::save_checkpoint(
        &checkpoint,
        &outcome.params,
        dataset.n_items,
        outcome.best_epoch,
        &cfg.train,
    )?;

    let reps = outcome.represent()?;
    let report = eval::evaluate_representations(
        &reps.user,
        &reps.items,
        &dataset,
        cfg.eval.scenario,
        cfg.eval.k,
    )?;
    let metrics_json = out.join("metrics.json");
    write_json(&metrics_json, &report)?;
    let metrics_csv = out.join("metrics.csv");
    eval::write_report_csv(&report, &metrics_csv)?;

    let attention = cfg
        .dump_attention
        .clone()
        .unwrap_or_else(|| out.join("attention.csv"));
    fusion::export_attention(&dataset, &reps.channel_alpha, &attention)?;

    let cross_validation = if cfg.eval.cross_validate {
        let full = load_full_dataset(cfg)?;
        let cv = eval::cross_validate(
            &full,
            &cfg.train,
            &cfg.ssl,
            cfg.eval.folds,
            cfg.eval.repeats,
            cfg.eval.scenario,
        )?;
        let path = out.join("cross_validation.json");
        write_json(&path, &cv)?;
        eval::write_metrics_csv(&cv, out.join("cross_validation.csv"))?;
        Some(path)
    } else {
        None
    };

    Manifest::new("train", cfg)?.write(out)?;
    Ok(TrainArtifacts {
        checkpoint,
        log: log_path,
        metrics_json,
        metrics_csv,
        attention,
        manifest: out.join("manifest.json"),
        cross_validation,
        best_epoch: outcome.best_epoch,
        metrics: MetricSummary::from(&report),
    })
}

/// Evaluates a checkpoint on the split it was trained with.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: impl AsRef<Path>,
    scenario: Scenario,
) -> Result<MetricsReport> {
    let checkpoint = checkpoint.as_ref();
    let ck = io::load_checkpoint(checkpoint)?;
    let run_cfg = RunConfig {
        train: ck.manifest.train.clone(),
        ..cfg.clone()
    };
    run_cfg.validate()?;
    let dataset = load_split(&run_cfg, ck.manifest.train.seed)?;
    if ck.manifest.n_users != dataset.n_users || ck.manifest.n_items != dataset.n_items {
        return Err(Error::Shape(format!(
            "checkpoint {} has {} users / {} items, dataset {} has {} / {}",
            checkpoint.display(),
            ck.manifest.n_users,
            ck.manifest.n_items,
            cfg.ratings
                .as_ref()
                .map_or("<synthetic>".into(), |p| p.display().to_string()),
            dataset.n_users,
            dataset.n_items
        )));
    }
    let train_cfg: &TrainConfig = &ck.manifest.train;
    let ctx =
        ModelContext::from_dataset(&dataset, &train_cfg.ablation.channels(), train_cfg.depth)?;
    let reps = model::represent(&ck.params, &ctx, &train_cfg.eval_options(dataset.n_users))?;
    let report =
        eval::evaluate_representations(&reps.user, &reps.items, &dataset, scenario, cfg.eval.k)?;
    create_dir(&cfg.output_dir)?;
    write_json(
        &cfg.output_dir.join(format!("eval_{scenario}.json")),
        &report,
    )?;
    eval::write_report_csv(&report, cfg.output_dir.join(format!("eval_{scenario}.csv")))?;
    Manifest::new("eval", &run_cfg)?.write(&cfg.output_dir)?;
    Ok(report)
}

/// Paths written by [`cmd_motifs`].
#[derive(Debug, Clone, PartialEq)]
pub struct MotifArtifacts {
    pub social: PathBuf,
    pub joint: PathBuf,
    pub purchase: PathBuf,
    pub stats: PathBuf,
}

/// Dumps the three channel adjacencies of the full dataset.
pub fn cmd_motifs(cfg: &RunConfig) -> Result<MotifArtifacts> {
    cfg.validate()?;
    let dataset = load_full_dataset(cfg)?;
    let motifs = motif::extract_motifs(&dataset.social, &dataset.train)?;
    let dir = cfg.output_dir.join("motifs");
    create_dir(&dir)?;
    let path = |c: motif::Channel| dir.join(format!("{c}.coo"));
    for c in motif::Channel::ALL {
        io::write_coo(path(c), motifs.channel(c))?;
    }
    let stats = dir.join("degree_stats.json");
    write_json(&stats, &io::motif_stats(&motifs))?;
    Manifest::new("motifs", cfg)?.write(&cfg.output_dir)?;
    Ok(MotifArtifacts {
        social: path(motif::Channel::Social),
        joint: path(motif::Channel::Joint),
        purchase: path(motif::Channel::Purchase),
        stats,
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    pub depth: usize,
    pub status: String,
    pub best_epoch: Option<usize>,
    pub metrics: Option<MetricSummary>,
}

/// Cartesian product of the sweep lists; empty lists contribute the base value.
pub fn sweep_grid(cfg: &RunConfig) -> Vec<(f64, f64, f64, usize)> {
    let or_base = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
    let depths = if cfg.sweep.depth.is_empty() {
        vec![cfg.train.depth]
    } else {
        cfg.sweep.depth.clone()
    };
    let mut grid = Vec::new();
    for &b1 in &or_base(&cfg.sweep.beta1, cfg.ssl.beta1) {
        for &b2 in &or_base(&cfg.sweep.beta2, cfg.ssl.beta2) {
            for &tau in &or_base(&cfg.sweep.tau, cfg.ssl.tau) {
                for &depth in &depths {
                    grid.push((b1, b2, tau, depth));
                }
            }
        }
    }
    grid
}

/// Trains every grid point on the same split and seed, so that points differ
/// only in the swept values. Failed points are recorded and skipped.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if cfg.sweep.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one non-empty list in [sweep]".into(),
        ));
    }
    create_dir(&cfg.output_dir)?;
    let dataset = load_split(cfg, cfg.train.seed)?;
    let mut points = Vec::new();
    for (beta1, beta2, tau, depth) in sweep_grid(cfg) {
        let mut ssl = cfg.ssl.clone();
        ssl.beta1 = beta1;
        ssl.beta2 = beta2;
        ssl.tau = tau;
        let train_cfg = TrainConfig {
            depth,
            ..cfg.train.clone()
        };
        let result = train::train(&dataset, &train_cfg, &ssl).and_then(|o| {
            Ok((
                o.best_epoch,
                o.evaluate(&dataset, cfg.eval.scenario, cfg.eval.k)?,
            ))
        });
        let point = match result {
            Ok((best_epoch, report)) => SweepPoint {
                beta1,
                beta2,
                tau,
                depth,
                status: "ok".into(),
                best_epoch: Some(best_epoch),
                metrics: Some(MetricSummary::from(&report)),
            },
            Err(e) => SweepPoint {
                beta1,
                beta2,
                tau,
                depth,
                status: format!("error: {e}"),
                best_epoch: None,
                metrics: None,
            },
        };
        points.push(point);
    }
    let mut csv = String::from("beta1,beta2,tau,depth,status,best_epoch,precision,recall,ndcg\n");
    for p in &points {
        let m = p.metrics.map_or(",,".to_string(), |m| {
            format!("{},{},{}", m.precision, m.recall, m.ndcg)
        });
        let status = p.status.replace(',', ";");
        let epoch = p.best_epoch.map_or(String::new(), |e| e.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.beta1, p.beta2, p.tau, p.depth, status, epoch, m
        ));
    }
    let path = cfg.output_dir.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_json(&cfg.output_dir.join("sweep.json"), &points)?;
    Manifest::new("sweep", cfg)?.write(&cfg.output_dir)?;
    Ok(points)
}
