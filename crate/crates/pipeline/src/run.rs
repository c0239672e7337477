//! Run-directory layout and the write-once artifact policy.

use std::path::{Path, PathBuf};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Created,
    Unchanged,
    Overwritten,
}

/// Writes `bytes` unless an artifact with different content is already
/// there; `force` allows replacing it. Identical content is a no-op so that
/// reruns are idempotent.
pub fn write_artifact(path: &Path, bytes: &[u8], force: bool) -> Result<WriteOutcome> {
    let existed = match std::fs::read(path) {
        Ok(old) if old == bytes => return Ok(WriteOutcome::Unchanged),
        Ok(_) if !force => return Err(PipelineError::ArtifactExists(path.to_path_buf())),
        Ok(_) => true,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))?;
    Ok(if existed {
        WriteOutcome::Overwritten
    } else {
        WriteOutcome::Created
    })
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("split/manifest.tsv")
    }

    pub fn patch_index(&self) -> PathBuf {
        self.root.join("split/patches.tsv")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.train_dir().join("latest.ckpt")
    }

    pub fn epoch_checkpoint(&self, epoch: u64) -> PathBuf {
        self.train_dir().join(format!("epoch_{epoch:04}.ckpt"))
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.train_dir().join("losses.csv")
    }

    pub fn config_echo(&self) -> PathBuf {
        self.train_dir().join("config.toml")
    }

    pub fn failure_report(&self) -> PathBuf {
        self.train_dir().join("failed.json")
    }

    pub fn translate_dir(&self) -> PathBuf {
        self.root.join("translate")
    }

    pub fn translated(&self, id: &str) -> PathBuf {
        self.translate_dir().join(format!("{id}_pa.png"))
    }

    /// Masks segmented on the translated images.
    pub fn pa_masks(&self) -> PathBuf {
        self.root.join("segment/pa")
    }

    /// Masks segmented on the source ultrasound images (re-segmented
    /// references).
    pub fn us_masks(&self) -> PathBuf {
        self.root.join("segment/us")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("evaluate/metrics.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.root.join("evaluate/summary.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report/report.md")
    }

    pub fn report_svg(&self) -> PathBuf {
        self.root.join("report/distribution.svg")
    }
}
