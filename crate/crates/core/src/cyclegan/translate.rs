//! Full-image translation: tile, run `G_PA` per tile, feather-stitch.

use serde::{Deserialize, Serialize};

use super::model::{ImageMap, ModelBundle};
use crate::datasets::{crop_patches, from_model_range, to_model_range};
use crate::error::{Error, Result};
use crate::image::{ImageGrid, ValueRange};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileGeometry {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for TileGeometry {
    fn default() -> Self {
        TileGeometry {
            patch_size: 450,
            stride: 225,
        }
    }
}

/// Blend weight along one axis of a tile: a linear ramp of length `ramp`
/// towards each side that lies inside the image, flat towards sides on the
/// image border (nothing else covers those pixels).
fn feather(len: usize, ramp: usize, ramp_start: bool, ramp_end: bool) -> Vec<f64> {
    let up = |d: usize| ((d + 1) as f64 / (ramp + 1) as f64).min(1.0);
    (0..len)
        .map(|i| {
            let a = if ramp_start { up(i) } else { 1.0 };
            let b = if ramp_end { up(len - 1 - i) } else { 1.0 };
            a.min(b)
        })
        .collect()
}

fn match_channels(image: &ImageGrid, channels: usize) -> ImageGrid {
    match (image.channels(), channels) {
        (1, 3) => image.to_rgb(),
        (3, 1) => image.luminance(),
        _ => image.clone(),
    }
}

/// Translates a unit-range image of any size with an arbitrary generator
/// working at `resolution`². Output has the input's height and width and
/// `channels` channels.
pub fn translate_with(
    generator: &dyn ImageMap,
    resolution: usize,
    channels: usize,
    image: &ImageGrid,
    geometry: TileGeometry,
) -> Result<ImageGrid> {
    if image.range() != ValueRange::Unit {
        return Err(Error::param("translate expects a unit-range image"));
    }
    if resolution == 0 {
        return Err(Error::param("network resolution must be positive"));
    }
    let input = match_channels(image, channels);
    let set = crop_patches(&input, "", geometry.patch_size, geometry.stride)?;
    let p = set.patch_size;
    let (ph, pw) = set.padded_shape;
    let ramp = p.saturating_sub(geometry.stride.min(p));

    let mut acc = vec![0.0; channels * ph * pw];
    let mut wsum = vec![0.0; ph * pw];
    for patch in &set.patches {
        let small = if p == resolution {
            patch.image.clone()
        } else {
            patch.image.resize(resolution, resolution)?
        };
        let x = Tensor::from_image(&to_model_range(&small)?);
        let y = generator.apply(&x)?;
        if y.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "generator mapped {:?} to {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let out = from_model_range(&y.to_image(0, ValueRange::Symmetric)?)?;
        let out = if p == resolution { out } else { out.resize(p, p)? };
        let (r0, c0) = patch.origin;
        let wr = feather(p, ramp, r0 > 0, r0 + p < ph);
        let wc = feather(p, ramp, c0 > 0, c0 + p < pw);
        for r in 0..p {
            for c in 0..p {
                let w = wr[r] * wc[c];
                let at = (r0 + r) * pw + c0 + c;
                wsum[at] += w;
                for ch in 0..channels {
                    acc[ch * ph * pw + at] += w * out.get(ch, r, c);
                }
            }
        }
    }
    for ch in 0..channels {
        for (a, w) in acc[ch * ph * pw..(ch + 1) * ph * pw].iter_mut().zip(&wsum) {
            *a = (*a / w).clamp(0.0, 1.0);
        }
    }
    let stitched = ImageGrid::from_vec(ph, pw, channels, ValueRange::Unit, acc)?;
    let (h, w) = set.source_shape;
    stitched.crop(0, 0, h, w)
}

/// Translates with the bundle's `G_PA`. The bundle must come from training
/// or a checkpoint (`trained_steps > 0`).
pub fn translate(bundle: &ModelBundle, trained_steps: u64, image: &ImageGrid, geometry: TileGeometry) -> Result<ImageGrid> {
    if trained_steps == 0 {
        return Err(Error::State("bundle has not been trained or loaded".into()));
    }
    translate_with(
        &bundle.g_pa,
        bundle.arch.resolution,
        bundle.arch.generator.channels,
        image,
        geometry,
    )
}
