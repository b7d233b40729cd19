//! On-disk layout of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sensorlm::caption::CaptionVariant;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn captions_dir(&self) -> PathBuf {
        self.root.join("captions")
    }

    pub fn captions(&self, variant: CaptionVariant) -> PathBuf {
        self.captions_dir().join(format!("{variant}.jsonl"))
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn norm_stats(&self) -> PathBuf {
        self.root.join("norm.json")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("model.slmc")
    }

    pub fn train_state(&self) -> PathBuf {
        self.root.join("checkpoints").join("model.slms")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("logs").join("train.csv")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str, ext: &str) -> PathBuf {
        self.reports().join(format!("{name}.{ext}"))
    }

    /// Refuses to overwrite `path` unless `force` is set.
    pub fn guard(&self, path: &Path, force: bool) -> Result<()> {
        if path.exists() && !force {
            bail!("{} already exists; pass --force to overwrite", path.display());
        }
        Ok(())
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
