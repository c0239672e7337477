//! Automatic seeding from a reference mask.

use super::gac::InitSpec;
use crate::error::{Error, Result};
use crate::mask::Mask;

pub const MIN_SEED_RADIUS: f64 = 2.0;

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) for one line of
/// squared distances.
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
    d
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel, where everything outside the grid counts as background. Zero on
/// background.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (h, w) = mask.shape();
    let (ph, pw) = (h + 2, w + 2);
    let big = ((ph * ph + pw * pw) as f64) * 4.0;
    let mut f: Vec<f64> = (0..ph * pw)
        .map(|i| {
            let (r, c) = (i / pw, i % pw);
            let inside = r >= 1 && c >= 1 && r <= h && c <= w && mask.get(r - 1, c - 1);
            if inside {
                big
            } else {
                0.0
            }
        })
        .collect();
    for c in 0..pw {
        let col: Vec<f64> = (0..ph).map(|r| f[r * pw + c]).collect();
        for (r, v) in edt_1d(&col).into_iter().enumerate() {
            f[r * pw + c] = v;
        }
    }
    for r in 0..ph {
        let row = edt_1d(&f[r * pw..(r + 1) * pw]);
        f[r * pw..(r + 1) * pw].copy_from_slice(&row);
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 1..=h {
        for c in 1..=w {
            out.push(f[r * pw + c].sqrt());
        }
    }
    out
}

/// Circle seed at the mask's centroid with half the maximal inscribed radius
/// (at least [`MIN_SEED_RADIUS`]). A centroid on background is moved to the
/// nearest foreground pixel. The radius is reduced if needed so the circle
/// stays inside the image.
pub fn seed_from_mask(mask: &Mask) -> Result<InitSpec> {
    let (cr, cc) = mask
        .centroid()
        .ok_or_else(|| Error::Seeding("empty mask; place a seed manually".into()))?;
    let (h, w) = mask.shape();
    let (rr, rc) = (cr.round() as usize, cc.round() as usize);
    let center = if mask.get(rr.min(h - 1), rc.min(w - 1)) {
        (cr, cc)
    } else {
        let mut best = (f64::INFINITY, 0, 0);
        for r in 0..h {
            for c in 0..w {
                if mask.get(r, c) {
                    let d = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    if d < best.0 {
                        best = (d, r, c);
                    }
                }
            }
        }
        (best.1 as f64, best.2 as f64)
    };
    let inscribed = distance_transform(mask).into_iter().fold(0.0, f64::max);
    let fit = (center.0 + 0.5)
        .min(center.1 + 0.5)
        .min(h as f64 - 0.5 - center.0)
        .min(w as f64 - 0.5 - center.1);
    let radius = (inscribed / 2.0).max(MIN_SEED_RADIUS).min(fit);
    if radius <= 0.0 {
        return Err(Error::Seeding("image too small for a seed circle".into()));
    }
    Ok(InitSpec::Circle { center, radius })
}
