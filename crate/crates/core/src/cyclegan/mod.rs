//! Unpaired two-domain translation with cycle and opposite-contrast terms.

pub mod checkpoint;
pub mod losses;
pub mod model;
pub mod pool;
pub mod train;
pub mod translate;

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use losses::{GanLoss, GeneratorLosses, LossWeights};
pub use model::{ArchConfig, ImageMap, ModelBundle, Preset};
pub use pool::ImagePool;
pub use train::{LossRecord, TrainConfig, TrainState};
pub use translate::{translate, translate_with, TileGeometry};
