//! Run configuration: a TOML key-value file plus command-line overrides.
//!
//! ```toml
//! ratings = "ratings.txt"
//! trust = "trust.txt"
//! output_dir = "out"
//!
//! [train]
//! epochs = 30
//! dim = 50
//!
//! [ssl]
//! tau = 0.5
//!
//! [sweep]
//! depth = [1, 2, 3, 4, 5]
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Scenario;
use crate::ssl::{DirectContrast, SslConfig};
use crate::synthetic::PlantedConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub scenario: Scenario,
    /// Fraction of interactions held out when training a single model.
    pub test_fraction: f64,
    /// Also run k-fold cross-validation after training.
    pub cross_validate: bool,
    pub folds: usize,
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            scenario: Scenario::General,
            test_fraction: 0.2,
            cross_validate: false,
            folds: 5,
            repeats: 1,
        }
    }
}

/// Value lists of a parameter sweep; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub tau: Vec<f64>,
    pub depth: Vec<usize>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.beta1.is_empty()
            && self.beta2.is_empty()
            && self.tau.is_empty()
            && self.depth.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Rating file (`user item [rating]` per line). Without it the planted
    /// synthetic dataset is used.
    pub ratings: Option<PathBuf>,
    /// Trust file (`source target [weight]` per line).
    pub trust: Option<PathBuf>,
    /// Field separator of the rating file: `auto`, `tab`, `comma`, `space` or
    /// a single character.
    pub separator: String,
    pub output_dir: PathBuf,
    /// Write the per-user attention CSV here instead of the output directory.
    pub dump_attention: Option<PathBuf>,
    pub train: TrainConfig,
    pub ssl: SslConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub synthetic: PlantedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ratings: None,
            trust: None,
            separator: "auto".into(),
            output_dir: PathBuf::from("out"),
            dump_attention: None,
            train: TrainConfig::default(),
            ssl: SslConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            synthetic: PlantedConfig::default(),
        }
    }
}

/// Command-line flags that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ablate: Vec<String>,
    pub direct_contrast: Option<DirectContrast>,
    pub scenario: Option<Scenario>,
    pub dump_attention: Option<PathBuf>,
    pub deterministic: bool,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.ratings.as_mut().map(resolve);
        cfg.trust.as_mut().map(resolve);
        cfg.dump_attention.as_mut().map(resolve);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        for name in &o.ablate {
            self.train.ablation.set(name)?;
        }
        if let Some(d) = o.direct_contrast {
            self.train.ablation.direct_contrast = d;
        }
        if let Some(s) = o.scenario {
            self.eval.scenario = s;
        }
        if let Some(p) = &o.dump_attention {
            self.dump_attention = Some(p.clone());
        }
        if o.deterministic {
            self.train.deterministic = true;
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = p.clone();
        }
        Ok(())
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ssl.validate()?;
        for p in [&self.ratings, &self.trust].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        if self.trust.is_some() && self.ratings.is_none() {
            return Err(Error::Config("a trust file needs a ratings file".into()));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.eval.cross_validate && (self.eval.folds < 2 || self.eval.repeats == 0) {
            return Err(Error::Config(
                "cross-validation needs folds >= 2 and repeats >= 1".into(),
            ));
        }
        self.separator()?;
        Ok(())
    }

    pub fn separator(&self) -> Result<crate::data::Separator> {
        use crate::data::Separator;
        Ok(match self.separator.as_str() {
            "auto" => Separator::Auto,
            "tab" => Separator::Char('\t'),
            "comma" => Separator::Char(','),
            "space" => Separator::Char(' '),
            s if s.chars().count() == 1 => Separator::Char(s.chars().next().expect("one char")),
            other => return Err(Error::Config(format!("unknown separator {other:?}"))),
        })
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_format: String,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seed: cfg.train.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: crate::io::MATRIX_MAGIC_STR.to_string(),
            config: cfg.to_toml()?,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}
