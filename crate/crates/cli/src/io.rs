//! File loading and writing shared by the subcommands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lookalike::dataset::{
    merge_train_test, parse_idx_images, parse_idx_labels, read_matrix_csv, MatrixTable,
};
use lookalike::{Embedding, UserBase};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(CliError::io(path))
}

fn idx_base(cfg: &RunConfig, images_key: &str, images: &str, labels: Option<(&str, &str)>) -> CliResult<UserBase> {
    let path = cfg.existing(images_key, images)?;
    let mut base = parse_idx_images(&read_bytes(&path)?)?;
    if let Some((key, l)) = labels {
        let path = cfg.existing(key, l)?;
        base = base.with_labels(parse_idx_labels(&read_bytes(&path)?)?)?;
    }
    Ok(base)
}

/// Loads the configured user base from IDX files or a matrix CSV.
pub fn load_user_base(cfg: &RunConfig) -> CliResult<UserBase> {
    if let Some(f) = &cfg.features {
        let path = cfg.existing("features", f)?;
        return Ok(read_table(&path)?.into_user_base()?);
    }
    let images = cfg
        .images
        .as_deref()
        .ok_or_else(|| CliError::Config("no input data: set images or features".into()))?;
    let train = idx_base(cfg, "images", images, cfg.labels.as_deref().map(|l| ("labels", l)))?;
    match (&cfg.test_images, &cfg.test_labels) {
        (Some(ti), Some(tl)) => {
            if cfg.labels.is_none() {
                return Err(CliError::Config("test set given without training labels".into()));
            }
            let test = idx_base(cfg, "test_images", ti, Some(("test_labels", tl)))?;
            Ok(merge_train_test(&train, &test)?)
        }
        _ => Ok(train),
    }
}

pub fn read_table(path: &Path) -> CliResult<MatrixTable> {
    let file = File::open(path).map_err(CliError::io(path))?;
    Ok(read_matrix_csv(BufReader::new(file))?)
}

/// Embedding CSV named in the config, or the one `embed` writes into the output directory.
pub fn embedding_path(cfg: &RunConfig) -> CliResult<PathBuf> {
    match &cfg.embedding {
        Some(p) => cfg.existing("embedding", p),
        None => {
            let p = cfg.out_dir().join("embedding.csv");
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "no embedding: set embedding or run embed first ({} missing)",
                    p.display()
                )));
            }
            Ok(p)
        }
    }
}

/// Embedding coordinates and the labels stored alongside them.
pub fn load_embedding(cfg: &RunConfig) -> CliResult<(Embedding, Option<Vec<u8>>)> {
    let table = read_table(&embedding_path(cfg)?)?;
    let labels = table.labels.clone();
    Ok((Embedding::from_table(table)?, labels))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Writes `name` inside `dir` through a buffered writer and returns the file name.
pub fn write_file<F>(dir: &Path, name: &str, f: F) -> CliResult<String>
where
    F: FnOnce(&mut BufWriter<File>) -> lookalike::Result<()>,
{
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = File::create(&path).map_err(CliError::io(&path))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(CliError::io(&path))?;
    Ok(name.to_string())
}

/// Newline-delimited user ids; blank lines and `#` comments are skipped.
pub fn read_id_file(path: &Path) -> CliResult<Vec<u64>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id = line.parse().map_err(|_| {
            CliError::Data(format!("{}:{}: not a user id: {line:?}", path.display(), i + 1))
        })?;
        ids.push(id);
    }
    Ok(ids)
}
