//! Binary masks. The same type serves as lesion tracing, segmentation result
//! and the morphological level set evolved by the active contour.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {height}x{width} mask",
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Mask { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Centre of mass as `(row, col)`, `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut n, mut sr, mut sc) = (0usize, 0.0, 0.0);
        for (i, _) in self.data.iter().enumerate().filter(|(_, &v)| v) {
            n += 1;
            sr += (i / self.width) as f64;
            sc += (i % self.width) as f64;
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    pub fn ensure_same_shape(&self, other: &Mask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "mask {}x{} vs mask {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.ensure_same_shape(other)?;
        Ok(Mask {
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
            ..*self
        })
    }

    /// Foreground pixels with at least one 4-neighbour in the background
    /// (outside the grid counts as background).
    pub fn boundary_pixel_count(&self) -> usize {
        let mut n = 0;
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.get(r, c) {
                    continue;
                }
                let nb = self.neighbours4(r, c);
                if nb.len() < 4 || nb.iter().any(|&(rr, cc)| !self.get(rr, cc)) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Number of unit edges separating foreground from background, the
    /// rasterised perimeter.
    pub fn perimeter(&self) -> usize {
        let mut n = 0;
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.get(r, c) {
                    continue;
                }
                n += usize::from(r == 0 || !self.get(r - 1, c));
                n += usize::from(r + 1 == self.height || !self.get(r + 1, c));
                n += usize::from(c == 0 || !self.get(r, c - 1));
                n += usize::from(c + 1 == self.width || !self.get(r, c + 1));
            }
        }
        n
    }

    fn neighbours4(&self, r: usize, c: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push((r - 1, c));
        }
        if r + 1 < self.height {
            out.push((r + 1, c));
        }
        if c > 0 {
            out.push((r, c - 1));
        }
        if c + 1 < self.width {
            out.push((r, c + 1));
        }
        out
    }

    /// Labels 8-connected foreground components; returns one mask per component,
    /// largest first.
    pub fn components(&self) -> Vec<Mask> {
        let mut seen = vec![false; self.data.len()];
        let mut comps = Vec::new();
        for start in 0..self.data.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            let mut comp = Mask::empty(self.height, self.width);
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.data[i] = true;
                let (r, c) = ((i / self.width) as isize, (i % self.width) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= self.height as isize || cc >= self.width as isize {
                            continue;
                        }
                        let j = rr as usize * self.width + cc as usize;
                        if self.data[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            comps.push(comp);
        }
        comps.sort_by_key(|m| std::cmp::Reverse(m.area()));
        comps
    }

    pub fn largest_component(&self) -> Mask {
        self.components()
            .into_iter()
            .next()
            .unwrap_or_else(|| Mask::empty(self.height, self.width))
    }

    /// Reads a mask PNG; any pixel at or above half intensity is foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma16();
        let (w, h) = gray.dimensions();
        Ok(Mask {
            height: h as usize,
            width: w as usize,
            data: gray.into_raw().into_iter().map(|v| v >= 32768).collect(),
        })
    }

    /// Single-channel 8-bit rendering with values {0, 255}.
    pub fn to_gray_image(&self) -> GrayImage {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_image().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_gray_image()
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out.into_inner())
    }
}
