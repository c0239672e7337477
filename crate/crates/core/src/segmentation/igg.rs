//! Inverse Gaussian Gradient edge-stopping map.

use crate::error::{Error, Result};
use crate::image::{clamp_index, ImageGrid, ValueRange};

pub const DEFAULT_ALPHA: f64 = 100.0;
pub const DEFAULT_SIGMA: f64 = 1.5;

/// `g` in `(0, 1]` together with its central-difference gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    height: usize,
    width: usize,
    g: Vec<f64>,
    /// d/d(row)
    grad_r: Vec<f64>,
    /// d/d(col)
    grad_c: Vec<f64>,
}

impl EdgeMap {
    /// Wraps precomputed edge values; the gradient is derived here.
    pub fn from_values(height: usize, width: usize, g: Vec<f64>) -> Result<Self> {
        if g.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!("{} values for a {height}x{width} edge map", g.len())));
        }
        if let Some(v) = g.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Range {
                expected: "(0, 1]".into(),
                min: *v,
                max: *v,
            });
        }
        let (grad_r, grad_c) = central_gradient(&g, height, width);
        Ok(EdgeMap {
            height,
            width,
            g,
            grad_r,
            grad_c,
        })
    }

    /// Uniform map, as if the image were constant.
    pub fn uniform(height: usize, width: usize) -> Self {
        EdgeMap {
            height,
            width,
            g: vec![1.0; height * width],
            grad_r: vec![0.0; height * width],
            grad_c: vec![0.0; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.g[r * self.width + c]
    }

    pub fn gradient(&self) -> (&[f64], &[f64]) {
        (&self.grad_r, &self.grad_c)
    }

    /// Grayscale rendering for display.
    pub fn to_image(&self) -> ImageGrid {
        ImageGrid::from_vec(self.height, self.width, 1, ValueRange::Unit, self.g.clone()).expect("g lies in (0, 1]")
    }
}

/// Central differences with replicated borders: `(f[i+1] - f[i-1]) / 2`
/// with out-of-range indices clamped to the edge.
pub fn central_gradient(f: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gr = vec![0.0; f.len()];
    let mut gc = vec![0.0; f.len()];
    for r in 0..height {
        let up = clamp_index(r as isize - 1, height);
        let down = clamp_index(r as isize + 1, height);
        for c in 0..width {
            let left = clamp_index(c as isize - 1, width);
            let right = clamp_index(c as isize + 1, width);
            gr[r * width + c] = (f[down * width + c] - f[up * width + c]) * 0.5;
            gc[r * width + c] = (f[r * width + right] - f[r * width + left]) * 0.5;
        }
    }
    (gr, gc)
}

/// Normalised 1-D Gaussian truncated at 4σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// First derivative of [`gaussian_kernel`] (as a correlation kernel).
pub fn gaussian_derivative_kernel(sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as f64;
    k.iter()
        .enumerate()
        .map(|(i, w)| (i as f64 - radius) / (sigma * sigma) * w)
        .collect()
}

/// 1-D correlation of an odd-length kernel with samples fetched by `at`.
/// Taps are summed in mirrored pairs so antisymmetric kernels cancel
/// exactly on constant input.
fn correlate(k: &[f64], at: impl Fn(isize) -> f64) -> f64 {
    let r = (k.len() / 2) as isize;
    let centre = k[r as usize] * at(0);
    (1..=r).fold(centre, |acc, t| {
        acc + (k[(r + t) as usize] * at(t) + k[(r - t) as usize] * at(-t))
    })
}

/// Correlates rows with `k_col` and columns with `k_row` (replicated borders).
pub fn separable_filter(f: &[f64], height: usize, width: usize, k_row: &[f64], k_col: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; f.len()];
    for r in 0..height {
        let row = &f[r * width..(r + 1) * width];
        for c in 0..width {
            tmp[r * width + c] = correlate(k_col, |t| row[clamp_index(c as isize + t, width)]);
        }
    }
    let mut out = vec![0.0; f.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = correlate(k_row, |t| tmp[clamp_index(r as isize + t, height) * width + c]);
        }
    }
    out
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(f: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    separable_filter(f, height, width, &k, &k)
}

/// `g = 1 / sqrt(1 + α·|∇(G_σ * I)|)` on the unit-range luminance of `image`.
pub fn inverse_gaussian_gradient(image: &ImageGrid, alpha: f64, sigma: f64) -> Result<EdgeMap> {
    if !(alpha > 0.0) || !alpha.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("alpha and sigma must be positive (got {alpha}, {sigma})")));
    }
    let gray = image.luminance();
    let gray = match gray.range() {
        ValueRange::Unit => gray,
        ValueRange::Symmetric => gray.map(ValueRange::Unit, |v| (v + 1.0) * 0.5)?,
    };
    let (h, w) = gray.shape();
    // derivative-of-Gaussian filters give the exact gradient of the smoothed
    // image rather than a finite difference of it
    let (k, dk) = (gaussian_kernel(sigma), gaussian_derivative_kernel(sigma));
    let gr = separable_filter(gray.data(), h, w, &dk, &k);
    let gc = separable_filter(gray.data(), h, w, &k, &dk);
    let g: Vec<f64> = gr
        .iter()
        .zip(&gc)
        .map(|(a, b)| 1.0 / (1.0 + alpha * (a * a + b * b).sqrt()).sqrt())
        .collect();
    let (grad_r, grad_c) = central_gradient(&g, h, w);
    Ok(EdgeMap {
        height: h,
        width: w,
        g,
        grad_r,
        grad_c,
    })
}
