//! Edge extraction and the prompt-embedded distance factor.
//!
//! The distance factor is the Euclidean distance to the nearest stopping-set
//! pixel (bone edges plus fracture prompts), normalized by its maximum over the
//! image. It is zero exactly on the stopping set.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{convolve, Kernel, Mask, ScalarField};

/// Characteristic function of a set of edge pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    mask: Mask,
}

impl EdgeSet {
    pub fn new(mask: Mask) -> Self {
        Self { mask }
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Ok(Self::new(Mask::empty(width, height)?))
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn into_mask(self) -> Mask {
        self.mask
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.mask.get(row, col)
    }

    pub fn len(&self) -> usize {
        self.mask.count()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_all_false()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

/// Canny hysteresis thresholds as fractions of the strongest suppressed response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for CannyThresholds {
    fn default() -> Self {
        Self { low: 0.2, high: 0.8 }
    }
}

impl CannyThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.low) {
            return Err(Error::param("canny.low", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.high) {
            return Err(Error::param("canny.high", "must lie in [0, 1]"));
        }
        if self.low >= self.high {
            return Err(Error::param("canny.low", "must be smaller than canny.high"));
        }
        Ok(())
    }
}

const CANNY_SMOOTH_SIZE: usize = 5;
const CANNY_SMOOTH_SIGMA: f64 = 1.0;

/// Quantized gradient direction as a `(drow, dcol)` step toward increasing intensity.
fn quantize(gx: f64, gy: f64) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees();
    // sectors of 45 degrees centred on the eight compass steps
    let sector = ((angle + 360.0 + 22.5) / 45.0).floor() as i32 % 8;
    match sector {
        0 => (0, 1),
        1 => (1, 1),
        2 => (1, 0),
        3 => (1, -1),
        4 => (0, -1),
        5 => (-1, -1),
        6 => (-1, 0),
        _ => (-1, 1),
    }
}

/// Canny edge detector: 5x5 Gaussian (sigma 1), Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, and 8-connected
/// hysteresis with thresholds relative to the maximum suppressed magnitude.
///
/// Ties across a symmetric step are resolved toward the brighter side, so a
/// step edge is marked on its first bright pixel.
pub fn canny(image: &ScalarField, thresholds: CannyThresholds) -> Result<EdgeSet> {
    thresholds.validate()?;
    let (w, h) = image.dims();
    let smooth = convolve(image, &Kernel::gaussian(CANNY_SMOOTH_SIZE, CANNY_SMOOTH_SIGMA)?);

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let p = |dr: isize, dc: isize| smooth.get_clamped(r + dr, c + dc);
            let x = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let y = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = r as usize * w + c as usize;
            gx[i] = x;
            gy[i] = y;
            mag[i] = x.hypot(y);
        }
    }

    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    let mut suppressed = vec![0.0; w * h];
    let mut peak: f64 = 0.0;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dr, dc) = quantize(gx[i], gy[i]);
            let fwd = at(r + dr, c + dc);
            let bwd = at(r - dr, c - dc);
            let tol = 1e-9 * m.max(1.0);
            if m > fwd + tol && m >= bwd - tol {
                suppressed[i] = m;
                peak = peak.max(m);
            }
        }
    }

    let mut edges = Mask::empty(w, h)?;
    if peak <= 0.0 {
        return Ok(EdgeSet::new(edges));
    }
    let high = thresholds.high * peak;
    let low = thresholds.low * peak;
    let mut queue = VecDeque::new();
    for (i, &m) in suppressed.iter().enumerate() {
        if m > 0.0 && m >= high {
            edges.set(i / w, i % w, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if suppressed[j] > 0.0 && suppressed[j] >= low && !edges.get(nr as usize, nc as usize) {
                    edges.set(nr as usize, nc as usize, true);
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeSet::new(edges))
}

/// Keeps edge pixels inside the region of interest whose local mean
/// intensity (`image * kernel`) reaches `eta`.
pub fn filter_bone_edges(
    all: &EdgeSet,
    image: &ScalarField,
    roi: &Mask,
    kernel: &Kernel,
    eta: f64,
) -> Result<EdgeSet> {
    image.check_same(all.dims())?;
    roi.check_same(all.dims())?;
    let local = convolve(image, kernel);
    let bright = Mask::threshold(&local, |v| v >= eta);
    Ok(EdgeSet::new(all.mask.and(roi)?.and(&bright)?))
}

/// Fracture annotations as pixel polylines; a one-point stroke marks a single pixel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSet {
    pub strokes: Vec<Vec<[i64; 2]>>,
}

impl PromptSet {
    pub fn is_empty(&self) -> bool {
        self.strokes.iter().all(|s| s.is_empty())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Checks every coordinate against a `width x height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (stroke, pts) in self.strokes.iter().enumerate() {
            for &[row, col] in pts {
                if row < 0 || col < 0 || row >= height as i64 || col >= width as i64 {
                    return Err(Error::PromptOutOfBounds { stroke, row, col });
                }
            }
        }
        Ok(())
    }

    /// Pixel set covered by the strokes.
    pub fn rasterize(&self, width: usize, height: usize) -> Result<Mask> {
        self.validate(width, height)?;
        let mut mask = Mask::empty(width, height)?;
        for pts in &self.strokes {
            match pts.as_slice() {
                [] => {}
                [p] => mask.set(p[0] as usize, p[1] as usize, true),
                _ => {
                    for seg in pts.windows(2) {
                        bresenham(seg[0], seg[1], |r, c| mask.set(r as usize, c as usize, true));
                    }
                }
            }
        }
        Ok(mask)
    }
}

/// Integer line stepping from `a` to `b`, inclusive of both ends.
pub fn bresenham(a: [i64; 2], b: [i64; 2], mut plot: impl FnMut(i64, i64)) {
    let (mut r, mut c) = (a[0], a[1]);
    let dr = (b[0] - r).abs();
    let dc = (b[1] - c).abs();
    let sr = if b[0] >= r { 1 } else { -1 };
    let sc = if b[1] >= c { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        plot(r, c);
        if r == b[0] && c == b[1] {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dr {
            err -= dr;
            c += sc;
        }
        if e2 < dc {
            err += dc;
            r += sr;
        }
    }
}

/// Union of the bone edges with the rasterized prompt strokes.
pub fn embed_prompts(bone: &EdgeSet, prompts: &PromptSet) -> Result<EdgeSet> {
    let (w, h) = bone.dims();
    let raster = prompts.rasterize(w, h)?;
    Ok(EdgeSet::new(bone.mask.or(&raster)?))
}

/// Normalized distance to the stopping set, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    field: ScalarField,
}

impl DistanceField {
    /// Wraps a field already known to lie in `[0, 1]`.
    pub fn from_field(field: ScalarField) -> Result<Self> {
        if field.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("beta", "values must lie in [0, 1]"));
        }
        Ok(Self { field })
    }

    /// `beta = 1` everywhere: no stopping information.
    pub fn neutral(width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            field: ScalarField::filled(width, height, 1.0)?,
        })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }
}

/// Exact Euclidean distance to the edge set, normalized by its maximum.
pub fn distance_factor(edges: &EdgeSet) -> Result<DistanceField> {
    let dist = euclidean_distance(edges.mask())?;
    let max = dist.max();
    let field = if max > 0.0 { dist.map(|d| d / max) } else { dist };
    Ok(DistanceField { field })
}

/// Unnormalized Euclidean distance from every pixel to the nearest set pixel.
pub fn euclidean_distance(mask: &Mask) -> Result<ScalarField> {
    if mask.is_all_false() {
        return Err(Error::NoStoppingSet);
    }
    let sq = squared_edt(mask);
    Ok(ScalarField::from_parts_unchecked(
        mask.width(),
        mask.height(),
        sq.into_iter().map(f64::sqrt).collect(),
    ))
}

/// Two-pass separable exact squared Euclidean distance transform
/// (lower envelope of parabolas along columns, then rows).
pub(crate) fn squared_edt(mask: &Mask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let inf = ((w * w + h * h) as f64) * 4.0 + 1.0;
    let mut grid: Vec<f64> = mask.as_slice().iter().map(|&b| if b { 0.0 } else { inf }).collect();

    let mut buf = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    let mut v = vec![0usize; w.max(h)];
    let mut z = vec![0.0; w.max(h) + 1];

    for c in 0..w {
        for r in 0..h {
            buf[r] = grid[r * w + c];
        }
        edt_1d(&buf[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        buf[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&buf[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, slot) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *slot = (qf - p) * (qf - p) + f[v[k]];
    }
}
