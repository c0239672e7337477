//! Straightforward re-implementations used as oracles. They favour clarity
//! over speed and share no code with the library.

/// Row-major grayscale grid.
#[derive(Clone)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Grid {
    pub fn at(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.h as isize - 1) as usize;
        let c = c.clamp(0, self.w as isize - 1) as usize;
        self.v[r * self.w + c]
    }
}

/// Edge map by direct 2D correlation with full derivative-of-Gaussian
/// kernels of radius `floor(4σ + 0.5)`, normalised on the Gaussian weights,
/// replicated borders.
pub fn igg_brute_force(img: &Grid, alpha: f64, sigma: f64) -> Vec<f64> {
    let rad = (4.0 * sigma + 0.5).floor() as isize;
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for i in -rad..=rad {
        for j in -rad..=rad {
            let k = (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push((i, j, k));
            total += k;
        }
    }
    let mut g = vec![0.0; img.h * img.w];
    for r in 0..img.h as isize {
        for c in 0..img.w as isize {
            let (mut dr, mut dc) = (0.0, 0.0);
            for &(i, j, k) in &kernel {
                let v = k / total / (sigma * sigma) * img.at(r + i, c + j);
                dr += i as f64 * v;
                dc += j as f64 * v;
            }
            g[r as usize * img.w + c as usize] = 1.0 / (1.0 + alpha * (dr * dr + dc * dc).sqrt()).sqrt();
        }
    }
    g
}

/// 1D Gaussian (order 0) or Gaussian-derivative (order 1) kernel of radius
/// `floor(4σ + 0.5)`, normalised on the order-0 weights.
fn gauss_1d(sigma: f64, order: u8) -> Vec<f64> {
    let rad = (4.0 * sigma + 0.5).floor() as isize;
    let phi: Vec<f64> = (-rad..=rad).map(|x| (-0.5 * (x * x) as f64 / (sigma * sigma)).exp()).collect();
    let s: f64 = phi.iter().sum();
    (-rad..=rad)
        .zip(&phi)
        .map(|(x, p)| match order {
            0 => p / s,
            _ => -(x as f64) / (sigma * sigma) * p / s,
        })
        .collect()
}

fn correlate(img: &Grid, k: &[f64], along_rows: bool) -> Grid {
    let rad = (k.len() / 2) as isize;
    let mut out = img.clone();
    for r in 0..img.h as isize {
        for c in 0..img.w as isize {
            out.v[r as usize * img.w + c as usize] = (-rad..=rad)
                .map(|t| {
                    let kv = k[(t + rad) as usize];
                    if along_rows {
                        kv * img.at(r + t, c)
                    } else {
                        kv * img.at(r, c + t)
                    }
                })
                .sum();
        }
    }
    out
}

/// Edge map from separable Gaussian-derivative filters.
pub fn igg_reference(img: &Grid, alpha: f64, sigma: f64) -> Vec<f64> {
    let (g0, g1) = (gauss_1d(sigma, 0), gauss_1d(sigma, 1));
    let dr = correlate(&correlate(img, &g1, true), &g0, false);
    let dc = correlate(&correlate(img, &g0, true), &g1, false);
    dr.v.iter()
        .zip(&dc.v)
        .map(|(a, b)| 1.0 / (1.0 + alpha * (a * a + b * b).sqrt()).sqrt())
        .collect()
}

/// Array gradient with one-sided first differences at the borders.
fn array_gradient(f: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let d = |get: &dyn Fn(usize) -> f64, i: usize, n: usize| -> f64 {
        if n == 1 {
            0.0
        } else if i == 0 {
            get(1) - get(0)
        } else if i == n - 1 {
            get(n - 1) - get(n - 2)
        } else {
            (get(i + 1) - get(i - 1)) / 2.0
        }
    };
    let mut gr = vec![0.0; h * w];
    let mut gc = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            gr[r * w + c] = d(&|k| f[k * w + c], r, h);
            gc[r * w + c] = d(&|k| f[r * w + k], c, w);
        }
    }
    (gr, gc)
}

fn get(u: &[bool], h: usize, w: usize, r: isize, c: isize) -> bool {
    r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && u[r as usize * w + c as usize]
}

/// Binary dilation/erosion by a centred structuring element given as
/// offsets; pixels outside the grid count as background.
fn dilate(u: &[bool], h: usize, w: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; u.len()];
    for r in 0..h as isize {
        for c in 0..w as isize {
            out[r as usize * w + c as usize] = se.iter().any(|&(dr, dc)| get(u, h, w, r + dr, c + dc));
        }
    }
    out
}

fn erode(u: &[bool], h: usize, w: usize, se: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; u.len()];
    for r in 0..h as isize {
        for c in 0..w as isize {
            out[r as usize * w + c as usize] = se.iter().all(|&(dr, dc)| get(u, h, w, r + dr, c + dc));
        }
    }
    out
}

fn square() -> Vec<(isize, isize)> {
    (-1..=1).flat_map(|r| (-1..=1).map(move |c| (r, c))).collect()
}

fn lines() -> [Vec<(isize, isize)>; 4] {
    [
        vec![(-1, -1), (0, 0), (1, 1)],
        vec![(-1, 0), (0, 0), (1, 0)],
        vec![(-1, 1), (0, 0), (1, -1)],
        vec![(0, -1), (0, 0), (0, 1)],
    ]
}

fn sup_inf(u: &[bool], h: usize, w: usize) -> Vec<bool> {
    let parts: Vec<Vec<bool>> = lines().iter().map(|l| erode(u, h, w, l)).collect();
    (0..u.len()).map(|i| parts.iter().any(|p| p[i])).collect()
}

fn inf_sup(u: &[bool], h: usize, w: usize) -> Vec<bool> {
    let parts: Vec<Vec<bool>> = lines().iter().map(|l| dilate(u, h, w, l)).collect();
    (0..u.len()).map(|i| parts.iter().all(|p| p[i])).collect()
}

/// Morphological geodesic active contour on a precomputed edge map `g`:
/// thresholded balloon, gradient attachment, then alternating curvature
/// operators. Runs the full iteration budget.
pub fn gac_reference(
    g: &[f64],
    h: usize,
    w: usize,
    init: &[bool],
    iterations: usize,
    smoothing: usize,
    balloon: f64,
    threshold: f64,
) -> Vec<bool> {
    let (dgr, dgc) = array_gradient(g, h, w);
    let balloon_zone: Vec<bool> = g.iter().map(|&v| balloon != 0.0 && v > threshold / balloon.abs()).collect();
    let mut u = init.to_vec();
    let mut cycle = 0usize;
    for _ in 0..iterations {
        if balloon != 0.0 {
            let aux = if balloon > 0.0 {
                dilate(&u, h, w, &square())
            } else {
                erode(&u, h, w, &square())
            };
            for i in 0..u.len() {
                if balloon_zone[i] {
                    u[i] = aux[i];
                }
            }
        }
        let uf: Vec<f64> = u.iter().map(|&b| f64::from(u8::from(b))).collect();
        let (dur, duc) = array_gradient(&uf, h, w);
        for i in 0..u.len() {
            let a = dgr[i] * dur[i] + dgc[i] * duc[i];
            if a > 0.0 {
                u[i] = true;
            } else if a < 0.0 {
                u[i] = false;
            }
        }
        for _ in 0..smoothing {
            u = if cycle % 2 == 0 {
                sup_inf(&inf_sup(&u, h, w), h, w)
            } else {
                inf_sup(&sup_inf(&u, h, w), h, w)
            };
            cycle += 1;
        }
    }
    u
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let tp = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * tp as f64 / total as f64
    }
}
