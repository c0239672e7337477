//! Procedural two-domain phantoms.
//!
//! The ultrasound-style renderer produces a mid-gray speckled background with
//! a darker lesion, depth attenuation and an optional acoustic shadow. The
//! anatomy-style renderer produces a smooth colour image of the same geometry
//! with a lighter lesion. Both return the exact lesion mask.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::{ClassLabel, Sample};
use crate::error::{Error, Result};
use crate::image::{ImageGrid, ValueRange};
use crate::mask::Mask;

/// Minimum distance between the lesion and the image border, in pixels.
pub const LESION_MARGIN: f64 = 2.0;

const US_BACKGROUND: f64 = 0.55;
const US_LESION: f64 = 0.18;
const SHADOW_FACTOR: f64 = 0.45;
const PA_BACKGROUND: [f64; 3] = [0.52, 0.26, 0.27];
const PA_LESION: [f64; 3] = [0.93, 0.80, 0.74];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// `(row, col)`
    pub center: (f64, f64),
    /// Semi-axes along the rotated column and row directions.
    pub semi_axes: (f64, f64),
    /// Radians, counter-clockwise.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub lesion: Option<Ellipse>,
    pub lesion_class: ClassLabel,
    pub shadow: bool,
    /// Exponential decay rate per image height.
    pub attenuation: f64,
    /// Scale of the multiplicative unit-mean speckle.
    pub speckle_strength: f64,
    /// Relative boundary perturbation amplitude for malignant lesions.
    pub irregularity: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Spec("image size must be positive".into()));
        }
        if !(self.attenuation >= 0.0) || !(self.speckle_strength >= 0.0) || !(self.irregularity >= 0.0) {
            return Err(Error::Spec(
                "attenuation, speckle_strength and irregularity must be non-negative".into(),
            ));
        }
        if self.irregularity >= 0.9 {
            return Err(Error::Spec("irregularity must stay below 0.9".into()));
        }
        match (&self.lesion, self.lesion_class) {
            (Some(_), ClassLabel::Normal) => {
                return Err(Error::Spec("normal phantoms carry no lesion".into()))
            }
            (None, ClassLabel::Benign | ClassLabel::Malignant) => {
                return Err(Error::Spec(format!("{} phantoms need a lesion", self.lesion_class)))
            }
            _ => {}
        }
        if let Some(e) = &self.lesion {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return Err(Error::Spec("lesion semi-axes must be positive".into()));
            }
            let reach = e.semi_axes.0.max(e.semi_axes.1) * (1.0 + self.boundary_amplitude());
            let (cr, cc) = e.center;
            let lo = LESION_MARGIN;
            let hi_r = self.height as f64 - 1.0 - LESION_MARGIN;
            let hi_c = self.width as f64 - 1.0 - LESION_MARGIN;
            if cr - reach < lo || cr + reach > hi_r || cc - reach < lo || cc + reach > hi_c {
                return Err(Error::Spec(format!(
                    "lesion at ({cr:.1},{cc:.1}) with reach {reach:.1} leaves the {}x{} image (margin {LESION_MARGIN})",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }

    fn boundary_amplitude(&self) -> f64 {
        match self.lesion_class {
            ClassLabel::Malignant => self.irregularity,
            _ => 0.0,
        }
    }

    /// Exact lesion mask (pixel centres inside the boundary).
    pub fn lesion_mask(&self) -> Mask {
        let Some(e) = self.lesion else {
            return Mask::empty(self.height, self.width);
        };
        let harmonics = self.harmonics();
        let (s, c) = e.rotation.sin_cos();
        Mask::from_fn(self.height, self.width, |r, col| {
            let dy = r as f64 - e.center.0;
            let dx = col as f64 - e.center.1;
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let rho = ((u / e.semi_axes.0).powi(2) + (v / e.semi_axes.1).powi(2)).sqrt();
            let theta = v.atan2(u);
            let limit = 1.0 + harmonics.iter().map(|h| h.amp * (h.k * theta + h.phase).sin()).sum::<f64>();
            rho <= limit
        })
    }

    /// Boundary perturbation for malignant lesions: a few angular harmonics
    /// whose amplitudes sum to `irregularity`.
    fn harmonics(&self) -> Vec<Harmonic> {
        let amp = self.boundary_amplitude();
        if amp == 0.0 {
            return Vec::new();
        }
        let mut rng = stream(self.seed, 7);
        let ks = [3.0, 5.0, 7.0];
        let raw: Vec<f64> = ks.iter().map(|_| rng.random_range(0.5..1.0)).collect();
        let total: f64 = raw.iter().sum();
        ks.iter()
            .zip(raw)
            .map(|(&k, w)| Harmonic {
                k,
                amp: amp * w / total,
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect()
    }
}

struct Harmonic {
    k: f64,
    amp: f64,
    phase: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Smooth background texture: a handful of random low-frequency waves.
fn texture_field(height: usize, width: usize, rng: &mut impl RngCore, waves: usize, max_freq: f64) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = (0..waves)
        .map(|_| {
            let fr = rng.random_range(-max_freq..max_freq);
            let fc = rng.random_range(-max_freq..max_freq);
            (fr, fc, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let norm = (waves as f64 / 2.0).sqrt().max(1.0);
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / height as f64, c as f64 / width as f64);
            let v: f64 = params
                .iter()
                .map(|&(fr, fc, ph)| (2.0 * PI * (fr * y + fc * x) + ph).sin())
                .sum();
            out.push(v / norm);
        }
    }
    out
}

/// Unit-mean Rayleigh speckle averaged over 2×2 grains.
fn speckle_field(height: usize, width: usize, rng: &mut impl RngCore) -> Vec<f64> {
    // Rayleigh with scale sqrt(2/pi) has unit mean
    let scale = (2.0 / PI).sqrt();
    let raw: Vec<f64> = (0..height * width)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            scale * (-2.0 * u.ln()).sqrt()
        })
        .collect();
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            let r1 = (r + 1).min(height - 1);
            let c1 = (c + 1).min(width - 1);
            out[r * width + c] =
                0.25 * (raw[r * width + c] + raw[r * width + c1] + raw[r1 * width + c] + raw[r1 * width + c1]);
        }
    }
    out
}

/// Ultrasound-style rendering: gray, darker lesion, speckle, depth decay and
/// optional shadow band below the lesion.
pub fn render_us_style(spec: &PhantomSpec) -> Result<(ImageGrid, Mask)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mask = spec.lesion_mask();
    let mut rng = stream(spec.seed, 1);
    let texture = texture_field(h, w, &mut rng, 6, 4.0);
    let speckle = speckle_field(h, w, &mut rng);
    let tex_amp = 0.08 * spec.speckle_strength;

    let shadow_cols = match (&spec.lesion, spec.shadow) {
        (Some(_), true) => shadow_band(&mask),
        _ => None,
    };

    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let decay = (-spec.attenuation * r as f64 / h as f64).exp();
        for c in 0..w {
            let i = r * w + c;
            let base = if mask.get(r, c) { US_LESION } else { US_BACKGROUND };
            let mut v = base * (1.0 + tex_amp * texture[i]);
            v *= (1.0 + spec.speckle_strength * (speckle[i] - 1.0)).max(0.0);
            if let Some((top, c0, c1)) = shadow_cols {
                if r > top && c >= c0 && c <= c1 {
                    v *= SHADOW_FACTOR;
                }
            }
            data.push((v * decay).clamp(0.0, 1.0));
        }
    }
    Ok((ImageGrid::from_vec(h, w, 1, ValueRange::Unit, data)?, mask))
}

/// Columns `(bottom_row, first_col, last_col)` shadowed below a lesion: the
/// central 60% of its horizontal extent.
pub fn shadow_band(mask: &Mask) -> Option<(usize, usize, usize)> {
    let mut bottom = None;
    let (mut c_lo, mut c_hi) = (usize::MAX, 0);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                bottom = Some(r);
                c_lo = c_lo.min(c);
                c_hi = c_hi.max(c);
            }
        }
    }
    let bottom = bottom?;
    let span = (c_hi - c_lo) as f64;
    let trim = (0.2 * span).round() as usize;
    Some((bottom, c_lo + trim, c_hi - trim))
}

/// Anatomy-style rendering: smooth colour tissue with a lighter lesion.
pub fn render_anatomy_style(spec: &PhantomSpec) -> Result<(ImageGrid, Mask)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mask = spec.lesion_mask();
    let mut rng = stream(spec.seed, 2);
    let fibres = texture_field(h, w, &mut rng, 4, 6.0);
    let plane = h * w;
    let mut data = vec![0.0; plane * 3];
    for i in 0..plane {
        let (r, c) = (i / w, i % w);
        let colour = if mask.get(r, c) { PA_LESION } else { PA_BACKGROUND };
        for ch in 0..3 {
            data[ch * plane + i] = (colour[ch] * (1.0 + 0.03 * fibres[i])).clamp(0.0, 1.0);
        }
    }
    Ok((ImageGrid::from_vec(h, w, 3, ValueRange::Unit, data)?, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Range of the larger semi-axis as a fraction of the smaller image side.
    pub lesion_radius: (f64, f64),
    /// Range of minor/major semi-axis ratio.
    pub aspect: (f64, f64),
    pub shadow_probability: f64,
    pub attenuation: (f64, f64),
    pub speckle_strength: (f64, f64),
    pub irregularity: f64,
    /// Reuse the ultrasound-domain geometry for the anatomy domain. Only for
    /// oracle tests; training data is unpaired.
    pub paired: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            lesion_radius: (0.14, 0.24),
            aspect: (0.6, 1.0),
            shadow_probability: 0.4,
            attenuation: (0.3, 1.0),
            speckle_strength: (0.3, 0.5),
            irregularity: 0.25,
            paired: false,
        }
    }
}

impl SynthConfig {
    /// Draws a spec of the given class from `rng`.
    pub fn draw(&self, class: ClassLabel, rng: &mut impl RngCore) -> PhantomSpec {
        let side = self.height.min(self.width) as f64;
        let amp = if class == ClassLabel::Malignant { self.irregularity } else { 0.0 };
        let major = side * rng.random_range(self.lesion_radius.0..=self.lesion_radius.1);
        let minor = major * rng.random_range(self.aspect.0..=self.aspect.1);
        let reach = major * (1.0 + amp);
        let lo = LESION_MARGIN + reach + 1.0;
        let center_r = rng.random_range(lo..=(self.height as f64 - lo).max(lo));
        let center_c = rng.random_range(lo..=(self.width as f64 - lo).max(lo));
        let rotation = rng.random_range(0.0..PI);
        let lesion = (class != ClassLabel::Normal).then_some(Ellipse {
            center: (center_r, center_c),
            semi_axes: (major, minor),
            rotation,
        });
        let shadow = rng.random_bool(self.shadow_probability.clamp(0.0, 1.0));
        PhantomSpec {
            height: self.height,
            width: self.width,
            lesion,
            lesion_class: class,
            shadow,
            attenuation: rng.random_range(self.attenuation.0..=self.attenuation.1),
            speckle_strength: rng.random_range(self.speckle_strength.0..=self.speckle_strength.1),
            irregularity: self.irregularity,
            seed: rng.next_u64(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub us: Vec<Sample>,
    pub anatomy: Vec<Sample>,
}

/// `n_per_class` images per class in each domain. The two domains come from
/// independent draws unless `config.paired` is set.
pub fn generate_dataset(n_per_class: usize, config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    if n_per_class == 0 {
        return Err(Error::param("n_per_class must be at least 1"));
    }
    generate_with_counts([n_per_class; 3], config, seed)
}

/// Splits `total` images per domain over the classes as evenly as possible,
/// earlier classes taking the remainder.
pub fn class_counts_for_total(total: usize) -> [usize; 3] {
    let base = total / 3;
    let extra = total % 3;
    [0, 1, 2].map(|i| base + usize::from(i < extra))
}

/// Like [`generate_dataset`] with a separate count per class, in
/// [`ClassLabel::ALL`] order.
pub fn generate_with_counts(counts: [usize; 3], config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::param("at least one image must be requested"));
    }
    let mut us_rng = stream(seed, 100);
    let mut pa_rng = stream(seed, 200);
    let mut us = Vec::with_capacity(total);
    let mut anatomy = Vec::with_capacity(total);
    for (class, n) in ClassLabel::ALL.into_iter().zip(counts) {
        for i in 1..=n {
            let id = format!("{class} ({i})");
            let us_spec = config.draw(class, &mut us_rng);
            let pa_spec = if config.paired {
                us_spec.clone()
            } else {
                config.draw(class, &mut pa_rng)
            };
            let (img, mask) = render_us_style(&us_spec)?;
            us.push(sample(&id, img, mask, class));
            let (img, mask) = render_anatomy_style(&pa_spec)?;
            anatomy.push(sample(&id, img, mask, class));
        }
    }
    Ok(SynthDataset { us, anatomy })
}

fn sample(id: &str, image: ImageGrid, mask: Mask, class: ClassLabel) -> Sample {
    Sample {
        id: id.to_string(),
        image,
        masks: if class == ClassLabel::Normal { Vec::new() } else { vec![mask] },
        class_label: class,
    }
}

/// Writes samples as a BUSI tree under `root` (`<class>/<id>.png`,
/// `<class>/<id>_mask.png`).
pub fn write_busi_layout(samples: &[Sample], root: &Path) -> Result<()> {
    for s in samples {
        let dir = root.join(s.class_label.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        s.image.save_png(&dir.join(format!("{}.png", s.id)))?;
        for (i, m) in s.masks.iter().enumerate() {
            let name = if i == 0 {
                format!("{}_mask.png", s.id)
            } else {
                format!("{}_mask_{i}.png", s.id)
            };
            m.save_png(&dir.join(name))?;
        }
    }
    Ok(())
}

/// Squared perimeter over area; grows with boundary irregularity.
pub fn isoperimetric_ratio(mask: &Mask) -> f64 {
    let p = mask.perimeter() as f64;
    p * p / mask.area().max(1) as f64
}

/// Mean of the 3×3 local variance over the image (first channel's luminance).
pub fn mean_local_variance(image: &ImageGrid) -> f64 {
    let lum = image.luminance();
    let (h, w) = lum.shape();
    let mut total = 0.0;
    let mut n = 0usize;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let vals: Vec<f64> = (0..9).map(|k| lum.get(0, r + k / 3 - 1, c + k % 3 - 1)).collect();
            let m = vals.iter().sum::<f64>() / 9.0;
            total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Gaussian jitter helper used by callers that want noisy copies of phantoms.
pub fn add_gaussian_noise(image: &ImageGrid, sigma: f64, seed: u64) -> Result<ImageGrid> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = stream(seed, 9);
    let (lo, hi) = image.range().bounds();
    let data = image
        .data()
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(lo, hi))
        .collect();
    ImageGrid::from_vec(image.height(), image.width(), image.channels(), image.range(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benign(size: usize) -> PhantomSpec {
        PhantomSpec {
            height: size,
            width: size,
            lesion: Some(Ellipse {
                center: (size as f64 / 2.0, size as f64 / 2.0),
                semi_axes: (size as f64 * 0.2, size as f64 * 0.13),
                rotation: 0.4,
            }),
            lesion_class: ClassLabel::Benign,
            shadow: false,
            attenuation: 0.5,
            speckle_strength: 0.4,
            irregularity: 0.25,
            seed: 3,
        }
    }

    #[test]
    fn degenerate_phantom_is_constant() {
        let spec = PhantomSpec {
            lesion: None,
            lesion_class: ClassLabel::Normal,
            attenuation: 0.0,
            speckle_strength: 0.0,
            ..benign(32)
        };
        let (img, mask) = render_us_style(&spec).unwrap();
        let (lo, hi) = img.min_max();
        assert_eq!(lo, hi);
        assert!(mask.is_empty());
    }

    #[test]
    fn ellipse_area_matches_analytic() {
        let spec = benign(200);
        let e = spec.lesion.unwrap();
        let analytic = PI * e.semi_axes.0 * e.semi_axes.1;
        let area = spec.lesion_mask().area() as f64;
        assert!((area - analytic).abs() / analytic < 0.01, "{area} vs {analytic}");
    }

    #[test]
    fn lesion_outside_bounds_is_rejected() {
        let mut spec = benign(64);
        spec.lesion.as_mut().unwrap().center = (3.0, 32.0);
        assert!(matches!(render_us_style(&spec), Err(Error::Spec(_))));
        let mut spec = benign(64);
        spec.speckle_strength = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn shadow_darkens_band_below_lesion() {
        let mut spec = benign(128);
        spec.shadow = true;
        spec.lesion.as_mut().unwrap().center = (40.0, 64.0);
        let (img, mask) = render_us_style(&spec).unwrap();
        let (bottom, c0, c1) = shadow_band(&mask).unwrap();
        let width = c1 - c0 + 1;
        let band_mean = |cols: std::ops::Range<usize>| {
            let mut s = 0.0;
            let mut n = 0;
            for r in bottom + 1..128 {
                for c in cols.clone() {
                    s += img.get(0, r, c);
                    n += 1;
                }
            }
            s / n as f64
        };
        let below = band_mean(c0..c1 + 1);
        let lateral = band_mean(c1 + 1..(c1 + 1 + width).min(128));
        assert!(below < lateral, "{below} !< {lateral}");
    }

    #[test]
    fn domains_share_geometry_with_opposite_contrast() {
        let spec = benign(64);
        let (us, m1) = render_us_style(&spec).unwrap();
        let (pa, m2) = render_anatomy_style(&spec).unwrap();
        assert_eq!(m1, m2);
        let contrast = |img: &ImageGrid| {
            let lum = img.luminance();
            let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
            for r in 0..64 {
                for c in 0..64 {
                    if m1.get(r, c) {
                        a += lum.get(0, r, c);
                        na += 1;
                    } else {
                        b += lum.get(0, r, c);
                        nb += 1;
                    }
                }
            }
            a / na as f64 - b / nb as f64
        };
        assert!(contrast(&us) < 0.0);
        assert!(contrast(&pa) > 0.0);
    }

    #[test]
    fn anatomy_without_lesion_is_near_uniform() {
        let spec = PhantomSpec {
            lesion: None,
            lesion_class: ClassLabel::Normal,
            ..benign(48)
        };
        let (img, mask) = render_anatomy_style(&spec).unwrap();
        assert!(mask.is_empty());
        let (lo, hi) = img.luminance().min_max();
        // lesion contrast is ~0.5 in luminance
        assert!(hi - lo < 0.1, "{lo}..{hi}");
    }

    #[test]
    fn malignant_boundary_is_more_irregular() {
        let size = 160;
        let circle = |class, irregularity| PhantomSpec {
            lesion: Some(Ellipse {
                center: (80.0, 80.0),
                semi_axes: (40.0, 40.0),
                rotation: 0.0,
            }),
            lesion_class: class,
            irregularity,
            ..benign(size)
        };
        let malignant = circle(ClassLabel::Malignant, 0.25).lesion_mask();
        // benign disk rescaled to the malignant area
        let r = (malignant.area() as f64 / PI).sqrt();
        let mut b = circle(ClassLabel::Benign, 0.0);
        b.lesion.as_mut().unwrap().semi_axes = (r, r);
        let benign_mask = b.lesion_mask();
        assert!(
            (benign_mask.area() as f64 - malignant.area() as f64).abs() / (malignant.area() as f64) < 0.02
        );
        assert!(isoperimetric_ratio(&malignant) > isoperimetric_ratio(&benign_mask));
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let cfg = SynthConfig {
            height: 32,
            width: 32,
            ..SynthConfig::default()
        };
        let a = generate_dataset(10, &cfg, 5).unwrap();
        let b = generate_dataset(10, &cfg, 5).unwrap();
        for (x, y) in a.us.iter().zip(&b.us).chain(a.anatomy.iter().zip(&b.anatomy)) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.masks, y.masks);
        }
        let big = generate_dataset(100, &cfg, 1).unwrap();
        for class in ClassLabel::ALL {
            assert_eq!(big.us.iter().filter(|s| s.class_label == class).count(), 100);
            assert_eq!(big.anatomy.iter().filter(|s| s.class_label == class).count(), 100);
        }
    }

    #[test]
    fn paired_mode_shares_masks_unpaired_does_not() {
        let cfg = SynthConfig {
            height: 40,
            width: 40,
            paired: true,
            ..SynthConfig::default()
        };
        let d = generate_dataset(5, &cfg, 9).unwrap();
        for (u, a) in d.us.iter().zip(&d.anatomy) {
            assert_eq!(u.masks, a.masks);
        }
        let d = generate_dataset(5, &SynthConfig { paired: false, ..cfg }, 9).unwrap();
        assert!(d.us.iter().zip(&d.anatomy).any(|(u, a)| u.masks != a.masks));
    }
}
