//! Run configuration. Every key is documented in `docs/config.md`; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use echoanat_core::cyclegan::{ArchConfig, GanLoss, LossWeights, Preset, TileGeometry, TrainConfig};
use echoanat_core::datasets::{MaskSelection, SplitRatios};
use echoanat_core::metrics::StdKind;
use echoanat_core::nn::AdamConfig;
use echoanat_core::segmentation::GacParams;
use echoanat_core::synthdata::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Output directory for every artifact of this run.
    pub dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { dir: "run".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Ultrasound images in the BUSI layout.
    pub root: PathBuf,
    /// Anatomy-domain images in the same layout.
    pub anatomy_root: PathBuf,
    pub mask_selection: MaskSelection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: "data/us".into(),
            anatomy_root: "data/pa".into(),
            mask_selection: MaskSelection::Union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub seed: u64,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitSection {
            seed: 0,
            train: r.train,
            validation: r.validation,
            test: r.test,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train,
            validation: self.validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Images per domain, spread evenly over the three classes.
    pub count: usize,
    pub seed: u64,
    pub phantom: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            count: 200,
            seed: 0,
            phantom: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub gan_loss: GanLoss,
    pub weights: LossWeights,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: Preset::Desk,
            gan_loss: GanLoss::Log,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: u64,
    pub seed: u64,
    /// Keep a numbered checkpoint every this many epochs (the latest is
    /// always written).
    pub checkpoint_every: u64,
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub adam: AdamConfig,
    pub zero_init_output: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: 30,
            seed: 0,
            checkpoint_every: 1,
            batch_size: t.batch_size,
            pool_capacity: t.pool_capacity,
            adam: t.adam,
            zero_init_output: t.zero_init_output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Reduce every mask to its largest connected component before scoring.
    pub largest_component: bool,
    pub std: StdKind,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            largest_component: false,
            std: StdKind::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    /// Defaults to the preset's geometry when absent.
    pub tiling: Option<TileGeometry>,
    pub segmentation: GacParams,
    pub report: ReportSection,
}

impl RunConfig {
    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        cfg.validate().map_err(|e| PipelineError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let path = std::fs::canonicalize(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("/"));
        RunConfig::from_toml(&text, base, &path)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.run.dir, &mut self.dataset.root, &mut self.dataset.anatomy_root] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks value ranges. Path existence is checked per command since
    /// `synth` creates the dataset roots.
    pub fn validate(&self) -> Result<()> {
        self.split.ratios().validate()?;
        self.model.weights.validate()?;
        self.train_config().validate()?;
        self.arch().validate()?;
        self.segmentation.validate()?;
        let t = self.tiling();
        if t.patch_size == 0 || t.stride == 0 || t.stride > t.patch_size {
            return Err(PipelineError::Invalid(format!(
                "tiling needs 0 < stride <= patch_size, got {t:?}"
            )));
        }
        if self.training.checkpoint_every == 0 {
            return Err(PipelineError::Invalid("training.checkpoint_every must be positive".into()));
        }
        if self.synth.count == 0 {
            return Err(PipelineError::Invalid("synth.count must be positive".into()));
        }
        Ok(())
    }

    pub fn require_dir(path: &Path, what: &str) -> Result<()> {
        if path.is_dir() {
            Ok(())
        } else {
            Err(PipelineError::Missing(format!("{what} {} does not exist", path.display())))
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::preset(self.model.preset)
    }

    pub fn tiling(&self) -> TileGeometry {
        self.tiling.unwrap_or(match self.model.preset {
            Preset::Paper => TileGeometry::default(),
            Preset::Desk | Preset::Tiny => {
                let r = self.arch().resolution;
                TileGeometry {
                    patch_size: r,
                    stride: r / 2,
                }
            }
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.training.batch_size,
            pool_capacity: self.training.pool_capacity,
            weights: self.model.weights,
            gan_loss: self.model.gan_loss,
            adam: self.training.adam,
            zero_init_output: self.training.zero_init_output,
        }
    }

    /// Applies `--seed` to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.synth.seed = seed;
        self.training.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
