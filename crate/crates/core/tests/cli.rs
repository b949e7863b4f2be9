//! End-to-end runs of the four subcommands through the library entry points
//! and the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use motifrec::commands;
use motifrec::config::RunConfig;
use motifrec::eval::Scenario;
use motifrec::io;
use motifrec::motif;

const TOY_CONFIG: &str = r#"
[train]
epochs = 2
batch_size = 128
dim = 8
seed = 7

[synthetic]
n_users = 40
n_items = 30
n_blocks = 2
interactions_per_user = 6
"#;

fn toy_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TOY_CONFIG).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg.train.deterministic = true;
    cfg
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, TOY_CONFIG).unwrap();
    path
}

fn motifrec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motifrec"))
}

#[test]
fn train_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let a = commands::cmd_train(&toy_config(dir.path())).unwrap();
    for p in [
        &a.log,
        &a.metrics_json,
        &a.metrics_csv,
        &a.attention,
        &a.manifest,
    ] {
        assert!(p.is_file(), "{}", p.display());
    }
    assert!(a.checkpoint.join("checkpoint.json").is_file());
    let log = std::fs::read_to_string(&a.log).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "l_r", "l_1", "l_2", "L"] {
            assert!(v.get(key).is_some(), "{key} missing");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&a.manifest).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let attention = std::fs::read_to_string(&a.attention).unwrap();
    let rows: Vec<&str> = attention.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    for row in rows {
        let sum: f64 = row
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_reloads_to_the_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let a = commands::cmd_train(&cfg).unwrap();
    let first = commands::cmd_eval(&cfg, &a.checkpoint, Scenario::General).unwrap();
    let second = commands::cmd_eval(&cfg, &a.checkpoint, Scenario::General).unwrap();
    assert_eq!(first, second);
    let trained: motifrec::eval::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(&a.metrics_json).unwrap()).unwrap();
    assert_eq!(first, trained);
    let cold = commands::cmd_eval(&cfg, &a.checkpoint, Scenario::ColdStart).unwrap();
    assert!(dir.path().join("eval_cold_start.json").is_file());
    assert!(cold.n_users <= first.n_users + first.excluded_users);
}

#[test]
fn motif_dump_round_trips_and_matches_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let a = commands::cmd_motifs(&cfg).unwrap();
    let ds = commands::load_full_dataset(&cfg).unwrap();
    let set = motif::extract_motifs(&ds.social, &ds.train).unwrap();
    let stats: io::MotifStats =
        serde_json::from_str(&std::fs::read_to_string(&a.stats).unwrap()).unwrap();
    for (path, c) in [
        (&a.social, motif::Channel::Social),
        (&a.joint, motif::Channel::Joint),
        (&a.purchase, motif::Channel::Purchase),
    ] {
        let dumped = io::read_coo(path).unwrap();
        assert_eq!(&dumped, set.channel(c));
        let s = stats.channels.iter().find(|s| s.channel == c).unwrap();
        assert_eq!(s.row_sums, dumped.row_sums());
        assert_eq!(s.nnz, dumped.nnz());
    }
}

#[test]
fn empty_trust_file_gives_empty_social_dump() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ratings.txt"),
        "a x 5\nb x 3\nb y 1\nc y 2\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("trust.txt"), "").unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "ratings = \"ratings.txt\"\ntrust = \"trust.txt\"\noutput_dir = \"out\"\n{TOY_CONFIG}"
        ),
    )
    .unwrap();
    let status = motifrec()
        .args(["motifs", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    let social = io::read_coo(dir.path().join("out/motifs/social.coo")).unwrap();
    assert_eq!(social.nnz(), 0);
    let purchase = io::read_coo(dir.path().join("out/motifs/purchase.coo")).unwrap();
    assert_eq!(purchase.nnz(), 4);
}

#[test]
fn sweep_rows_follow_the_grid_and_singletons_match_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.sweep.depth = vec![1, 2, 3];
    let points = commands::cmd_sweep(&cfg).unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().all(|p| p.status == "ok"));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let single_dir = tempfile::tempdir().unwrap();
    let mut single = toy_config(single_dir.path());
    single.sweep.tau = vec![single.ssl.tau];
    let point = commands::cmd_sweep(&single).unwrap().remove(0);
    let trained = commands::cmd_train(&toy_config(tempfile::tempdir().unwrap().path())).unwrap();
    assert_eq!(point.metrics.unwrap(), trained.metrics);
    assert_eq!(point.best_epoch.unwrap(), trained.best_epoch);

    let mut tau = toy_config(dir.path());
    tau.sweep.tau = vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.6, 0.7, 0.8];
    tau.train.epochs = 1;
    assert_eq!(commands::sweep_grid(&tau).len(), 9);
}

#[test]
fn binary_train_is_reproducible_with_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |out: &str| {
        let status = motifrec()
            .args(["train", "--deterministic", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--output-dir")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out).join("metrics.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn binary_flags_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let dump = dir.path().join("alpha.csv");
    let status = motifrec()
        .args([
            "train",
            "--ablate",
            "no_social",
            "--scenario",
            "cold_start",
            "--config",
        ])
        .arg(&cfg)
        .arg("--dump-attention")
        .arg(&dump)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("0")));
    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["scenario"], "cold_start");

    let status = motifrec()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .args(["--scenario", "general"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("out/eval_general.json").is_file());
}

#[test]
fn missing_input_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "ratings = \"absent.txt\"\n").unwrap();
    let out = motifrec()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
    let out = motifrec()
        .args(["train", "--config"])
        .arg(dir.path().join("nope.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 0\n").unwrap();
    let out = motifrec()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = motifrec()
        .args(["train", "--ablate", "no_everything"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
