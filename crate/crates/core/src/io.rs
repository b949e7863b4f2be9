//! On-disk formats.
//!
//! - Binary matrix: magic `MRECMAT1`, rows and cols as little-endian `u64`,
//!   then row-major little-endian `f64` values.
//! - Checkpoint: a directory with one binary matrix per tensor and a
//!   `checkpoint.json` manifest.
//! - Coordinate dump: `# rows cols nnz` header, then `row col value` lines.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::motif::{Channel, MotifSet};
use crate::sparse::SparseMatrix;
use crate::train::TrainConfig;

pub const MATRIX_MAGIC: &[u8; 8] = b"MRECMAT1";
pub const MATRIX_MAGIC_STR: &str = "MRECMAT1";

pub fn write_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let run = || -> std::io::Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MATRIX_MAGIC)?;
        f.write_all(&(m.nrows() as u64).to_le_bytes())?;
        f.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(bad("not a binary matrix file"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes")) as usize;
    let (rows, cols) = (word(8), word(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(24))
        .ok_or_else(|| bad("header overflows"))?;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "{rows}x{cols} header but {} payload bytes",
            bytes.len() - 24
        )));
    }
    let values = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
}

/// Manifest of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub best_epoch: usize,
    pub adam_step: u64,
    pub tensors: Vec<String>,
    pub files: Vec<String>,
    pub train: TrainConfig,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams,
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    params: &ModelParams,
    n_items: usize,
    best_epoch: usize,
    train: &TrainConfig,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = model::tensor_names();
    let mut files = Vec::new();
    for (k, (t, name)) in params.tensors.iter().zip(&names).enumerate() {
        let file = format!("{k:02}_{name}.bin");
        write_matrix(dir.join(&file), t)?;
        files.push(file);
    }
    let manifest = CheckpointManifest {
        format: MATRIX_MAGIC_STR.to_string(),
        n_users: params.n_users(),
        n_items,
        dim: params.dim(),
        best_epoch,
        adam_step: params.step,
        tensors: names,
        files,
        train: train.clone(),
    };
    let path = dir.join("checkpoint.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join("checkpoint.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.files.len() != model::N_TENSORS {
        return Err(Error::Checkpoint(format!(
            "{} lists {} tensors, expected {}",
            path.display(),
            manifest.files.len(),
            model::N_TENSORS
        )));
    }
    let tensors = manifest
        .files
        .iter()
        .map(|f| read_matrix(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if tensors[0].dim() != (manifest.n_users, manifest.dim) {
        return Err(Error::Checkpoint(format!(
            "user embeddings are {:?}, manifest says {}x{}",
            tensors[0].dim(),
            manifest.n_users,
            manifest.dim
        )));
    }
    let mut params = ModelParams::from_tensors(tensors);
    params.step = manifest.adam_step;
    Ok(Checkpoint { manifest, params })
}

pub fn write_coo(path: impl AsRef<Path>, m: &SparseMatrix) -> Result<()> {
    let path = path.as_ref();
    let run = || -> std::io::Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# {} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
        for (r, c, v) in m.iter() {
            writeln!(f, "{r} {c} {v}")?;
        }
        f.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn read_coo(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut shape = None;
    let mut triplets = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.trim_start_matches('#').split_whitespace().collect();
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(k + 1, e.to_string()))
        };
        if line.starts_with('#') {
            if fields.len() != 3 {
                return Err(parse_err(k + 1, "header must be `# rows cols nnz`".into()));
            }
            shape = Some((num(fields[0])?, num(fields[1])?));
            continue;
        }
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(parse_err(
                k + 1,
                format!("expected `row col value`, got {line:?}"),
            ));
        }
        let v = fields[2]
            .parse::<f64>()
            .map_err(|e| parse_err(k + 1, e.to_string()))?;
        triplets.push((num(fields[0])?, num(fields[1])?, v));
    }
    let (rows, cols) = shape.ok_or_else(|| parse_err(1, "missing header".into()))?;
    SparseMatrix::from_triplets(rows, cols, triplets)
}

/// Per-channel degree statistics of a motif extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: Channel,
    pub nnz: usize,
    pub total_weight: f64,
    pub isolated_users: usize,
    pub max_degree: f64,
    pub mean_degree: f64,
    /// Weighted degree (row sum) of every user.
    pub row_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifStats {
    pub n_users: usize,
    /// Nonzero count of each motif adjacency, M1 first.
    pub motif_nnz: Vec<usize>,
    pub channels: Vec<ChannelStats>,
}

pub fn motif_stats(motifs: &MotifSet) -> MotifStats {
    let channels = Channel::ALL
        .iter()
        .map(|&c| {
            let m = motifs.channel(c);
            let row_sums = m.row_sums();
            let n = row_sums.len().max(1) as f64;
            ChannelStats {
                channel: c,
                nnz: m.nnz(),
                total_weight: m.values().iter().sum(),
                isolated_users: row_sums.iter().filter(|&&s| s == 0.0).count(),
                max_degree: row_sums.iter().copied().fold(0.0, f64::max),
                mean_degree: row_sums.iter().sum::<f64>() / n,
                row_sums,
            }
        })
        .collect();
    MotifStats {
        n_users: motifs.social.n_rows(),
        motif_nnz: motifs.motifs.iter().map(SparseMatrix::nnz).collect(),
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.5, -2.0, f64::MIN_POSITIVE], [0.0, 3.25, 1e300]];
        let p = dir.path().join("m.bin");
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"MRECMAT1");
        assert_eq!(bytes.len(), 24 + 6 * 8);
    }

    #[test]
    fn truncated_matrix_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_matrix(&p, &array![[1.0, 2.0]]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn coo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SparseMatrix::from_dense(&array![[0.0, 2.0, 0.0], [1.0, 0.0, 0.5]]);
        let p = dir.path().join("m.coo");
        write_coo(&p, &m).unwrap();
        assert_eq!(read_coo(&p).unwrap(), m);
        let empty = SparseMatrix::zeros(4, 4);
        write_coo(&p, &empty).unwrap();
        assert_eq!(read_coo(&p).unwrap(), empty);
    }
}
