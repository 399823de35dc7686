//! Level-set machinery: signed-distance initialization, smoothed Heaviside,
//! the weighted curvature term, explicit gradient-flow steps, exact
//! redistancing and zero-level extraction.
//!
//! Sign convention: `phi < 0` inside the contour, `phi > 0` outside. The
//! segmentation mask is `{phi <= 0}`.
//!
//! One explicit step computes
//!
//! ```text
//! F    = div(g grad(phi) / |grad(phi)|) + alpha * g
//! phi' = phi + h * beta * F * S(phi)
//! ```
//!
//! where `S` is `|grad(phi)|` (default) or `delta_eps(phi)`, and `beta` is the
//! distance factor (identically 1 for the classical flow).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::contour::{self, Polyline};
use crate::edges::DistanceField;
use crate::error::{Error, Result};
use crate::grid::{gradient, Mask, ScalarField};

/// Regularizer in `grad(phi) / (|grad(phi)| + MU)`.
pub const MU: f64 = 1e-8;

/// Axis-aligned rectangle `(r0, c0)`-`(r1, c1)`, inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl BoxRegion {
    pub fn new(r0: usize, c0: usize, r1: usize, c1: usize) -> Self {
        Self { r0, c0, r1, c1 }
    }

    /// The rectangle must be non-degenerate and keep a one-pixel margin to the frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.r0 >= self.r1 || self.c0 >= self.c1 {
            return Err(Error::param("init_box", "box is degenerate (need r0 < r1 and c0 < c1)"));
        }
        if self.r0 < 1 || self.c0 < 1 || self.r1 + 2 > height || self.c1 + 2 > width {
            return Err(Error::param("init_box", "box must lie strictly inside the image"));
        }
        Ok(())
    }

    /// Signed distance from pixel `(r, c)` to the rectangle outline.
    pub fn signed_distance(&self, r: usize, c: usize) -> f64 {
        let (r, c) = (r as f64, c as f64);
        let (r0, c0, r1, c1) = (self.r0 as f64, self.c0 as f64, self.r1 as f64, self.c1 as f64);
        if (r0..=r1).contains(&r) && (c0..=c1).contains(&c) {
            -(r - r0).min(r1 - r).min(c - c0).min(c1 - c)
        } else {
            let dr = (r0 - r).max(0.0).max(r - r1);
            let dc = (c0 - c).max(0.0).max(c - c1);
            dr.hypot(dc)
        }
    }
}

/// Initial level set: signed distance to the outline of `region`.
pub fn signed_distance_from_box(width: usize, height: usize, region: BoxRegion) -> Result<ScalarField> {
    region.validate(width, height)?;
    ScalarField::from_fn(width, height, |r, c| region.signed_distance(r, c))
}

/// `H_eps(z) = (1 + (2/pi) atan(z / eps)) / 2`
#[inline]
pub fn smoothed_heaviside(z: f64, epsilon: f64) -> f64 {
    0.5 * (1.0 + 2.0 / PI * (z / epsilon).atan())
}

/// `delta_eps(z) = eps / (pi (eps^2 + z^2))`, the derivative of [`smoothed_heaviside`].
#[inline]
pub fn smoothed_delta(z: f64, epsilon: f64) -> f64 {
    epsilon / (PI * (epsilon * epsilon + z * z))
}

/// `div(g grad(phi) / (|grad(phi)| + MU))` with central differences.
pub fn curvature_divergence(phi: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    phi.check_same(g.dims())?;
    let (w, h) = phi.dims();
    let (px, py) = gradient(phi);
    let mut nx = Vec::with_capacity(w * h);
    let mut ny = Vec::with_capacity(w * h);
    for ((&a, &b), &gv) in px.as_slice().iter().zip(py.as_slice()).zip(g.as_slice()) {
        let norm = a.hypot(b) + MU;
        nx.push(gv * a / norm);
        ny.push(gv * b / norm);
    }
    let (dnx, _) = gradient(&ScalarField::from_parts_unchecked(w, h, nx));
    let (_, dny) = gradient(&ScalarField::from_parts_unchecked(w, h, ny));
    dnx.zip_map(&dny, |a, b| a + b)
}

/// Factor multiplying the force in the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedFactor {
    #[default]
    GradNorm,
    DeltaEps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionParams {
    /// Area-term weight; positive shrinks, negative expands.
    pub alpha: f64,
    /// Time step.
    pub h: f64,
    /// Heaviside smoothing width (pixels).
    pub epsilon: f64,
    pub n_iters: usize,
    pub reinit_every: usize,
    pub speed_factor: SpeedFactor,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            h: 0.1,
            epsilon: 1.5,
            n_iters: 3000,
            reinit_every: 50,
            speed_factor: SpeedFactor::GradNorm,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::param("evolution.alpha", "must be finite"));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::param("evolution.h", "must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::param("evolution.epsilon", "must be positive"));
        }
        if self.reinit_every == 0 {
            return Err(Error::param("evolution.reinit_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Steppable solver state. Fields other than `phi` and `iter` stay frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub phi: ScalarField,
    pub iter: usize,
    pub g: ScalarField,
    pub beta: Option<DistanceField>,
    pub params: EvolutionParams,
}

impl EvolutionState {
    pub fn new(
        phi: ScalarField,
        g: ScalarField,
        beta: Option<DistanceField>,
        params: EvolutionParams,
    ) -> Result<Self> {
        params.validate()?;
        phi.check_same(g.dims())?;
        if let Some(b) = &beta {
            phi.check_same(b.field().dims())?;
        }
        if g.as_slice().iter().any(|&v| v <= 0.0) {
            return Err(Error::param("g", "edge detector must be positive everywhere"));
        }
        Ok(Self {
            phi,
            iter: 0,
            g,
            beta,
            params,
        })
    }

    pub fn mask(&self) -> Mask {
        extract_mask(&self.phi)
    }

    /// Advances `n` steps of the selected flow, redistancing whenever the
    /// iteration counter reaches a multiple of `reinit_every`.
    pub fn run(&mut self, n: usize, figac: bool) -> Result<()> {
        for _ in 0..n {
            self.advance(figac)?;
        }
        Ok(())
    }

    /// One step plus the periodic redistancing.
    pub fn advance(&mut self, figac: bool) -> Result<()> {
        let next = if figac { step_figac(self)? } else { step_classical(self)? };
        *self = next;
        if self.iter.is_multiple_of(self.params.reinit_every) {
            self.phi = reinitialize(&self.phi)?;
        }
        Ok(())
    }
}

fn step_with(state: &EvolutionState, beta: Option<&ScalarField>) -> Result<EvolutionState> {
    let p = &state.params;
    let (w, h) = state.phi.dims();
    let div = curvature_divergence(&state.phi, &state.g)?;
    let (px, py) = gradient(&state.phi);

    let mut out = Vec::with_capacity(w * h);
    let mut max_change: f64 = 0.0;
    let mut max_force: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for i in 0..w * h {
        let phi = state.phi.as_slice()[i];
        let force = div.as_slice()[i] + p.alpha * state.g.as_slice()[i];
        let grad = px.as_slice()[i].hypot(py.as_slice()[i]);
        let speed = match p.speed_factor {
            SpeedFactor::GradNorm => grad,
            SpeedFactor::DeltaEps => smoothed_delta(phi, p.epsilon),
        };
        let mut delta = force * speed;
        if let Some(b) = beta {
            delta *= b.as_slice()[i];
        }
        let next = phi + p.h * delta;
        if cfg!(debug_assertions) {
            max_change = max_change.max((next - phi).abs());
            max_force = max_force.max(force.abs());
            max_grad = max_grad.max(speed.abs());
        }
        out.push(next);
    }
    debug_assert!(
        max_change <= p.h * max_force * max_grad * (1.0 + 1e-12) + 1e-12,
        "step exceeded h*max|F|*max|S|"
    );
    let phi = ScalarField::new(w, h, out)?;
    Ok(EvolutionState {
        phi,
        iter: state.iter + 1,
        g: state.g.clone(),
        beta: state.beta.clone(),
        params: state.params,
    })
}

/// One explicit step of the classical geodesic flow; any distance factor is ignored.
pub fn step_classical(state: &EvolutionState) -> Result<EvolutionState> {
    step_with(state, None)
}

/// One explicit step with the update scaled pixelwise by the distance factor.
pub fn step_figac(state: &EvolutionState) -> Result<EvolutionState> {
    let beta = state
        .beta
        .as_ref()
        .ok_or(Error::State("distance factor required for the fracture-interactive flow"))?;
    step_with(state, Some(beta.field()))
}

/// Smoothed weighted length plus area energy:
/// `sum g delta_eps(phi) |grad(phi)| + alpha sum g H_eps(-phi)`.
pub fn smoothed_energy(phi: &ScalarField, g: &ScalarField, alpha: f64, epsilon: f64) -> Result<f64> {
    phi.check_same(g.dims())?;
    let (px, py) = gradient(phi);
    let mut e = 0.0;
    for i in 0..phi.len() {
        let v = phi.as_slice()[i];
        let gv = g.as_slice()[i];
        let grad = px.as_slice()[i].hypot(py.as_slice()[i]);
        e += gv * smoothed_delta(v, epsilon) * grad + alpha * gv * smoothed_heaviside(-v, epsilon);
    }
    Ok(e)
}

/// Replaces `phi` by the signed Euclidean distance to its zero crossing,
/// keeping the sign of every pixel.
///
/// The crossing is located by linear interpolation along every grid edge whose
/// endpoints straddle the interface (`<= 0` versus `> 0`).
pub fn reinitialize(phi: &ScalarField) -> Result<ScalarField> {
    let points = contour::edge_crossings(phi);
    if points.is_empty() {
        return Err(Error::ContourVanished);
    }
    let (w, h) = phi.dims();
    let index = PointIndex::new(&points, w, h);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let d = index.nearest(r as f64, c as f64);
            out.push(if phi.get(r, c) <= 0.0 { -d } else { d });
        }
    }
    ScalarField::new(w, h, out)
}

/// Bucketed point set for exact nearest-neighbour queries.
struct PointIndex<'a> {
    points: &'a [[f64; 2]],
    cell: f64,
    rows: usize,
    cols: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointIndex<'a> {
    const CELL: usize = 8;

    fn new(points: &'a [[f64; 2]], width: usize, height: usize) -> Self {
        let rows = height.div_ceil(Self::CELL).max(1);
        let cols = width.div_ceil(Self::CELL).max(1);
        let mut buckets = vec![Vec::new(); rows * cols];
        for (i, p) in points.iter().enumerate() {
            let br = ((p[0] / Self::CELL as f64) as usize).min(rows - 1);
            let bc = ((p[1] / Self::CELL as f64) as usize).min(cols - 1);
            buckets[br * cols + bc].push(i as u32);
        }
        Self {
            points,
            cell: Self::CELL as f64,
            rows,
            cols,
            buckets,
        }
    }

    fn nearest(&self, r: f64, c: f64) -> f64 {
        let br = ((r / self.cell) as usize).min(self.rows - 1) as isize;
        let bc = ((c / self.cell) as usize).min(self.cols - 1) as isize;
        let mut best = f64::INFINITY;
        let max_ring = self.rows.max(self.cols) as isize;
        for ring in 0..=max_ring {
            // points in ring `ring` are at least `(ring - 1) * cell` away
            if ring > 0 && best <= (ring - 1) as f64 * self.cell {
                break;
            }
            for dr in -ring..=ring {
                for dc in -ring..=ring {
                    if dr.abs() != ring && dc.abs() != ring {
                        continue;
                    }
                    let (rr, cc) = (br + dr, bc + dc);
                    if rr < 0 || cc < 0 || rr >= self.rows as isize || cc >= self.cols as isize {
                        continue;
                    }
                    for &i in &self.buckets[rr as usize * self.cols + cc as usize] {
                        let p = self.points[i as usize];
                        let d = (p[0] - r).hypot(p[1] - c);
                        if d < best {
                            best = d;
                        }
                    }
                }
            }
        }
        best
    }
}

/// `{phi <= 0}`
pub fn extract_mask(phi: &ScalarField) -> Mask {
    Mask::threshold(phi, |v| v <= 0.0)
}

/// Zero-level polylines by marching squares, in `(row, col)` pixel coordinates.
pub fn extract_contour(phi: &ScalarField) -> Vec<Polyline> {
    contour::marching_squares(phi)
}
