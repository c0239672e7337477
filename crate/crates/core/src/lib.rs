//! Core of the ultrasound to pseudo-anatomical translation pipeline.

pub mod cyclegan;
pub mod datasets;
pub mod error;
pub mod image;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod rle;
pub mod segmentation;
pub mod synthdata;

pub use error::{Error, Result};
pub use image::{ImageGrid, ValueRange};
pub use mask::Mask;
