//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use motifrec::commands;
use motifrec::config::{Overrides, RunConfig};
use motifrec::eval::Scenario;
use motifrec::ssl::DirectContrast;
use motifrec::Error;

#[derive(Parser)]
#[command(
    name = "motifrec",
    version,
    about = "Motif-channel social recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoint, log, metrics and attention CSV.
    Train(Common),
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to <output_dir>/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Dump channel adjacencies and degree statistics.
    Motifs(Common),
    /// Train every point of the configured parameter grid.
    Sweep(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ContrastArg {
    Triplet,
    Infonce,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    General,
    #[value(name = "cold_start", alias = "cold-start")]
    ColdStart,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// no_social, no_joint, no_purchase, no_matching or no_matching_ssl.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long, value_enum)]
    direct_contrast: Option<ContrastArg>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> motifrec::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            ablate: self.ablate.clone(),
            direct_contrast: self.direct_contrast.map(|d| match d {
                ContrastArg::Triplet => DirectContrast::Triplet,
                ContrastArg::Infonce => DirectContrast::Infonce,
            }),
            scenario: self.scenario.map(|s| match s {
                ScenarioArg::General => Scenario::General,
                ScenarioArg::ColdStart => Scenario::ColdStart,
            }),
            dump_attention: self.dump_attention.clone(),
            deterministic: self.deterministic,
            output_dir: self.output_dir.clone(),
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> motifrec::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let a = commands::cmd_train(&c.config()?)?;
            println!("{}", serde_json::to_string_pretty(&a)?);
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.config()?;
            let ck = checkpoint.unwrap_or_else(|| cfg.output_dir.join("checkpoint"));
            let report = commands::cmd_eval(&cfg, ck, cfg.eval.scenario)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Motifs(c) => {
            let a = commands::cmd_motifs(&c.config()?)?;
            println!(
                "{}\n{}\n{}\n{}",
                a.social.display(),
                a.joint.display(),
                a.purchase.display(),
                a.stats.display()
            );
        }
        Command::Sweep(c) => {
            for p in commands::cmd_sweep(&c.config()?)? {
                println!("{}", serde_json::to_string(&p)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("MOTIFREC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
