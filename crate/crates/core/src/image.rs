//! Planar floating-point images.
//!
//! [`ImageGrid`] stores pixels channel-major (`C×H×W`) together with the value
//! range they are declared to live in. Storage and file I/O use the unit range
//! `[0, 1]`; network input and output use the symmetric range `[-1, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Luminance weights applied when a tri-channel image is reduced to one channel.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 1]`
    Unit,
    /// `[-1, 1]`
    Symmetric,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symmetric => (-1.0, 1.0),
        }
    }

    pub fn contains(self, v: f64) -> bool {
        let (lo, hi) = self.bounds();
        v >= lo && v <= hi
    }
}

impl std::fmt::Display for ValueRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (lo, hi) = self.bounds();
        write!(f, "[{lo}, {hi}]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn filled(height: usize, width: usize, channels: usize, range: ValueRange, value: f64) -> Result<Self> {
        Self::from_vec(height, width, channels, range, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize, range: ValueRange) -> Result<Self> {
        Self::filled(height, width, channels, range, 0.0)
    }

    /// Builds an image from channel-major data, checking shape and range.
    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be at least 1x1, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values cannot fill {channels}x{height}x{width}",
                data.len()
            )));
        }
        let img = ImageGrid {
            height,
            width,
            channels,
            range,
            data,
        };
        img.check_range()?;
        Ok(img)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(c, r, col));
                }
            }
        }
        Self::from_vec(height, width, channels, range, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    /// Smallest and largest pixel value over all channels.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn check_range(&self) -> Result<()> {
        if self.data.iter().all(|&v| self.range.contains(v)) {
            return Ok(());
        }
        let (min, max) = self.min_max();
        Err(Error::Range {
            expected: self.range.to_string(),
            min,
            max,
        })
    }

    /// Applies `f` to every pixel and re-declares the range.
    pub fn map(&self, range: ValueRange, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vec(
            self.height,
            self.width,
            self.channels,
            range,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Reduces to a single channel using [`LUMA_WEIGHTS`]. Single-channel
    /// images are returned unchanged.
    pub fn luminance(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.height * self.width;
        let data = (0..plane)
            .map(|i| {
                let v: f64 = (0..3).map(|c| LUMA_WEIGHTS[c] * self.data[c * plane + i]).sum();
                let (lo, hi) = self.range.bounds();
                v.clamp(lo, hi)
            })
            .collect();
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            range: self.range,
            data,
        }
    }

    /// Replicates a gray image over three channels.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        ImageGrid {
            channels: 3,
            data,
            ..*self
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, self.channels, self.range, |c, r, col| {
            self.get(c, top + r, left + col)
        })
    }

    /// Grows the image to at least `min_height × min_width` by mirror
    /// reflection about the bottom and right borders (edge pixel not repeated).
    pub fn reflect_pad_to(&self, min_height: usize, min_width: usize) -> Self {
        let h = self.height.max(min_height);
        let w = self.width.max(min_width);
        if h == self.height && w == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for c in 0..self.channels {
            for r in 0..h {
                let sr = reflect_index(r as isize, self.height);
                for col in 0..w {
                    data.push(self.get(c, sr, reflect_index(col as isize, self.width)));
                }
            }
        }
        ImageGrid {
            height: h,
            width: w,
            data,
            ..*self
        }
    }

    /// Resamples with a separable triangle filter whose support widens when
    /// downscaling, so that shrinking averages rather than aliases.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!("cannot resize to {height}x{width}")));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let rows = resample_weights(self.height, height);
        let cols = resample_weights(self.width, width);
        let (lo, hi) = self.range.bounds();
        let mut data = Vec::with_capacity(height * width * self.channels);
        let mut tmp = vec![0.0; self.height * width];
        for c in 0..self.channels {
            let src = self.channel(c);
            for r in 0..self.height {
                let row = &src[r * self.width..(r + 1) * self.width];
                for (x, taps) in cols.iter().enumerate() {
                    tmp[r * width + x] = taps.iter().map(|&(i, wt)| wt * row[i]).sum();
                }
            }
            for taps in &rows {
                for x in 0..width {
                    let v: f64 = taps.iter().map(|&(i, wt)| wt * tmp[i * width + x]).sum();
                    data.push(v.clamp(lo, hi));
                }
            }
        }
        Self::from_vec(height, width, self.channels, self.range, data)
    }

    /// Reads an 8- or 16-bit PNG (gray or colour; alpha dropped) into the unit range.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let gray = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        if gray {
            let buf = img.to_luma16();
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect();
            ImageGrid {
                height: h as usize,
                width: w as usize,
                channels: 1,
                range: ValueRange::Unit,
                data,
            }
        } else {
            let buf = img.to_rgb16();
            let (w, h) = buf.dimensions();
            let plane = (w * h) as usize;
            let raw = buf.into_raw();
            let mut data = vec![0.0; plane * 3];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = f64::from(px[c]) / 65535.0;
                }
            }
            ImageGrid {
                height: h as usize,
                width: w as usize,
                channels: 3,
                range: ValueRange::Unit,
                data,
            }
        }
    }

    /// 8-bit rendering of a unit-range image.
    pub fn to_dynamic(&self) -> Result<DynamicImage> {
        if self.range != ValueRange::Unit {
            return Err(Error::param("only unit-range images can be encoded"));
        }
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        Ok(if self.channels == 1 {
            let buf: GrayImage =
                ImageBuffer::from_fn(w, h, |x, y| Luma([q(self.get(0, y as usize, x as usize))]));
            DynamicImage::ImageLuma8(buf)
        } else {
            let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                let (r, c) = (y as usize, x as usize);
                Rgb([q(self.get(0, r, c)), q(self.get(1, r, c)), q(self.get(2, r, c))])
            });
            DynamicImage::ImageRgb8(buf)
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_dynamic()?.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()?
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out.into_inner())
    }
}

/// Mirror index into `0..len` without repeating the edge sample; indices
/// beyond one reflection fold periodically.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Clamped index into `0..len`.
#[inline]
pub fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn resample_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let d = ((j as f64 + 0.5) - center).abs() / support;
                if d < 1.0 {
                    let idx = clamp_index(j, src);
                    let wt = 1.0 - d;
                    match taps.iter_mut().find(|(k, _)| *k == idx) {
                        Some(t) => t.1 += wt,
                        None => taps.push((idx, wt)),
                    }
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}
