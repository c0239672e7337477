//! Morphological geodesic active contours on a binary level set.

use serde::{Deserialize, Serialize};

use super::igg::{central_gradient, inverse_gaussian_gradient, EdgeMap, DEFAULT_ALPHA, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::mask::Mask;

/// Binary level set; foreground is the segmented region.
pub type LevelSet = Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GacParams {
    pub iterations: usize,
    pub smoothing: usize,
    pub balloon: f64,
    pub threshold: f64,
    pub early_stop_window: usize,
    pub alpha: f64,
    pub sigma: f64,
    /// Switch for the gradient attachment sub-step (always on in practice;
    /// off only to isolate the balloon force).
    pub attachment: bool,
}

impl Default for GacParams {
    fn default() -> Self {
        GacParams {
            iterations: 200,
            smoothing: 1,
            balloon: 1.0,
            threshold: 0.3,
            early_stop_window: 10,
            alpha: DEFAULT_ALPHA,
            sigma: DEFAULT_SIGMA,
            attachment: true,
        }
    }
}

impl GacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !self.balloon.is_finite() {
            return Err(Error::param("balloon must be finite"));
        }
        if self.early_stop_window == 0 {
            return Err(Error::param("early_stop_window must be positive"));
        }
        if !(self.alpha > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::param("alpha and sigma must be positive"));
        }
        Ok(())
    }
}

/// Initial contour.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Centre in pixel coordinates `(row, col)`, radius in pixels.
    Circle { center: (f64, f64), radius: f64 },
    Mask(Mask),
}

pub fn init_level_set(spec: &InitSpec, shape: (usize, usize)) -> Result<LevelSet> {
    let (h, w) = shape;
    match spec {
        InitSpec::Circle { center: (cr, cc), radius } => {
            let r = *radius;
            if !(r > 0.0) || !cr.is_finite() || !cc.is_finite() {
                return Err(Error::Seeding(format!("invalid circle ({cr}, {cc}) r={r}")));
            }
            // the disk must fit inside the pixel area [-0.5, h-0.5] x [-0.5, w-0.5]
            if cr - r < -0.5 || cc - r < -0.5 || cr + r > h as f64 - 0.5 || cc + r > w as f64 - 0.5 {
                return Err(Error::Seeding(format!(
                    "circle at ({cr}, {cc}) with radius {r} leaves the {h}x{w} image"
                )));
            }
            Ok(Mask::from_fn(h, w, |y, x| {
                let (dy, dx) = (y as f64 - cr, x as f64 - cc);
                dy * dy + dx * dx <= r * r
            }))
        }
        InitSpec::Mask(m) => {
            if m.shape() != shape {
                return Err(Error::Shape(format!("seed mask {:?} for a {:?} image", m.shape(), shape)));
            }
            Ok(m.clone())
        }
    }
}

/// 3×3 dilation (`grow`) or erosion; outside the grid counts as background.
fn morph3x3(u: &[bool], h: usize, w: usize, grow: bool) -> Vec<bool> {
    let mut out = vec![false; u.len()];
    for r in 0..h {
        for c in 0..w {
            let mut any = false;
            let mut all = true;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    let v = rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && u[rr as usize * w + cc as usize];
                    any |= v;
                    all &= v;
                }
            }
            out[r * w + c] = if grow { any } else { all };
        }
    }
    out
}

/// Line structuring elements through the centre: horizontal, vertical and
/// both diagonals, as `(dr, dc)` of one end (the other end is mirrored).
const LINES: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

fn line_value(u: &[bool], h: usize, w: usize, r: usize, c: usize, d: (isize, isize), sign: isize) -> bool {
    let (rr, cc) = (r as isize + sign * d.0, c as isize + sign * d.1);
    rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && u[rr as usize * w + cc as usize]
}

/// Supremum over the four lines of the erosion by that line.
fn sup_inf(u: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; u.len()];
    for r in 0..h {
        for c in 0..w {
            if !u[r * w + c] {
                continue;
            }
            out[r * w + c] = LINES
                .iter()
                .any(|&d| line_value(u, h, w, r, c, d, 1) && line_value(u, h, w, r, c, d, -1));
        }
    }
    out
}

/// Infimum over the four lines of the dilation by that line.
fn inf_sup(u: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![true; u.len()];
    for r in 0..h {
        for c in 0..w {
            if u[r * w + c] {
                continue;
            }
            out[r * w + c] = LINES
                .iter()
                .all(|&d| line_value(u, h, w, r, c, d, 1) || line_value(u, h, w, r, c, d, -1));
        }
    }
    out
}

/// Curvature operator; alternates `SI∘IS` (even `phase`) and `IS∘SI` (odd).
pub fn curvature_pass(u: &LevelSet, phase: usize) -> LevelSet {
    let (h, w) = u.shape();
    let d = u.data();
    let data = if phase % 2 == 0 {
        sup_inf(&inf_sup(d, h, w), h, w)
    } else {
        inf_sup(&sup_inf(d, h, w), h, w)
    };
    Mask::from_vec(h, w, data).expect("same shape")
}

/// One iteration: balloon, attachment, then `params.smoothing` curvature
/// passes starting at `phase` (the count of passes done so far in the run).
pub fn morphgac_step(u: &LevelSet, edge: &EdgeMap, params: &GacParams, phase: usize) -> Result<LevelSet> {
    let (h, w) = u.shape();
    if edge.shape() != (h, w) {
        return Err(Error::Shape(format!("level set {:?} vs edge map {:?}", u.shape(), edge.shape())));
    }
    let mut cur: Vec<bool> = u.data().to_vec();
    let g = edge.values();

    if params.balloon != 0.0 {
        let aux = morph3x3(&cur, h, w, params.balloon > 0.0);
        let limit = params.threshold / params.balloon.abs();
        for i in 0..cur.len() {
            if g[i] > limit {
                cur[i] = aux[i];
            }
        }
    }

    if params.attachment {
        let uf: Vec<f64> = cur.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let (ur, uc) = central_gradient(&uf, h, w);
        let (gr, gc) = edge.gradient();
        for i in 0..cur.len() {
            let s = gr[i] * ur[i] + gc[i] * uc[i];
            if s > 0.0 {
                cur[i] = true;
            } else if s < 0.0 {
                cur[i] = false;
            }
        }
    }

    let mut out = Mask::from_vec(h, w, cur)?;
    for k in 0..params.smoothing {
        out = curvature_pass(&out, phase + k);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GacRun {
    pub mask: LevelSet,
    /// Iterations actually performed.
    pub iterations: usize,
    pub stopped_early: bool,
    /// `(iteration, level set)`: the initial state, every `trace_every`-th
    /// iteration, and the final state.
    pub trace: Vec<(usize, LevelSet)>,
}

pub enum GacInput<'a> {
    Image(&'a ImageGrid),
    Edge(&'a EdgeMap),
}

pub fn morphgac_run(input: GacInput<'_>, init: &InitSpec, params: &GacParams, trace_every: usize) -> Result<GacRun> {
    morphgac_run_observed(input, init, params, trace_every, &mut |_, _| {})
}

/// As [`morphgac_run`], calling `observe(iteration, level_set)` after every
/// iteration.
pub fn morphgac_run_observed(
    input: GacInput<'_>,
    init: &InitSpec,
    params: &GacParams,
    trace_every: usize,
    observe: &mut dyn FnMut(usize, &LevelSet),
) -> Result<GacRun> {
    params.validate()?;
    let owned;
    let edge = match input {
        GacInput::Image(img) => {
            owned = inverse_gaussian_gradient(img, params.alpha, params.sigma)?;
            &owned
        }
        GacInput::Edge(e) => e,
    };
    let mut u = init_level_set(init, edge.shape())?;
    let mut trace = Vec::new();
    if trace_every > 0 {
        trace.push((0, u.clone()));
    }
    let mut unchanged = 0;
    let mut done = 0;
    let mut stopped_early = false;
    for it in 1..=params.iterations {
        let next = morphgac_step(&u, edge, params, (it - 1) * params.smoothing)?;
        done = it;
        if next == u {
            unchanged += 1;
        } else {
            unchanged = 0;
        }
        u = next;
        observe(it, &u);
        if trace_every > 0 && it % trace_every == 0 {
            trace.push((it, u.clone()));
        }
        if unchanged >= params.early_stop_window {
            stopped_early = true;
            break;
        }
    }
    if trace_every > 0 && trace.last().map(|t| t.0) != Some(done) {
        trace.push((done, u.clone()));
    }
    Ok(GacRun {
        mask: u,
        iterations: done,
        stopped_early,
        trace,
    })
}
