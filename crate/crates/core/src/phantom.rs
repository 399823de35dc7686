//! Synthetic bone phantoms with analytic ground truth.
//!
//! Images are windowed gray levels in `[0, 255]`; every pixel is classified by
//! whether its centre lies inside the analytic shapes, so noise-free phantoms
//! contain only the configured gray levels.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edges::PromptSet;
use crate::error::{Error, Result};
use crate::grid::{CtSlice, Mask, ScalarField};
use crate::knowledge::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Cortical ring around a dim trabecular interior.
    Ring,
    /// Ring with an angular wedge of the cortex removed.
    FracturedRing,
    /// Ring plus a dim soft-tissue blob inside the bounding box.
    RingWithBlob,
    /// Bright disk with a central hole that is either bone or background.
    Annulus,
    /// Two bright disks joined by a thin bright channel.
    TwoDisks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub background: f64,
    pub cortical: f64,
    pub interior: f64,
    pub blob_gray: f64,
    pub blob_radius: f64,
    /// Distance from the ring centre to the blob centre.
    pub blob_distance: f64,
    pub gap_degrees: f64,
    /// Direction of the fracture gap, degrees counter-clockwise from +col.
    pub gap_direction: f64,
    /// Annulus only: whether the hole is bone (bright) or background.
    pub bright_hole: bool,
    pub disk_radius: f64,
    pub disk_offset: f64,
    pub channel_width: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::Ring,
            size: 128,
            outer_radius: 40.0,
            inner_radius: 25.0,
            background: 20.0,
            cortical: 200.0,
            interior: 90.0,
            blob_gray: 60.0,
            blob_radius: 6.0,
            blob_distance: 53.0,
            gap_degrees: 45.0,
            gap_direction: 0.0,
            bright_hole: false,
            disk_radius: 18.0,
            disk_offset: 22.0,
            channel_width: 2,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn centre(&self) -> (f64, f64) {
        let c = (self.size / 2) as f64;
        (c, c)
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    /// Windowed gray-level image.
    pub image: ScalarField,
    pub truth: Mask,
    /// Pixels strictly inside the cortical ring (ring kinds).
    pub ring_interior: Option<Mask>,
    /// Cortical ring pixels, including the removed wedge for the fractured ring.
    pub ring: Option<Mask>,
    /// Removed wedge of the fractured ring.
    pub gap: Option<Mask>,
    /// Stroke tracing the missing outer cortex across the gap.
    pub prompt: Option<PromptSet>,
}

impl Phantom {
    /// The phantom as HU values under `window` (inverse of the linear branch).
    pub fn to_ct_slice(&self, window: Window) -> Result<CtSlice> {
        CtSlice::new(self.image.map(|g| window.gray_to_hu(g)), None)
    }
}

/// Angle of `(row, col)` around the centre, degrees in `(-180, 180]`, counter-clockwise from +col.
fn angle_deg(r: f64, c: f64, centre: (f64, f64)) -> f64 {
    (-(r - centre.0)).atan2(c - centre.1).to_degrees()
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let n = spec.size;
    if n < 16 {
        return Err(Error::param("phantom.size", "must be at least 16"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::param("phantom.noise_sigma", "must be non-negative"));
    }
    let centre = spec.centre();
    let half = n as f64 / 2.0;
    let fits = |reach: f64| reach < half - 2.0;
    let dist = |r: usize, c: usize| (r as f64 - centre.0).hypot(c as f64 - centre.1);

    let mut ring_interior = None;
    let mut ring = None;
    let mut gap = None;
    let mut prompt = None;

    let (mut image, truth) = match spec.kind {
        PhantomKind::Ring | PhantomKind::FracturedRing | PhantomKind::RingWithBlob => {
            if !(spec.inner_radius > 0.0 && spec.inner_radius < spec.outer_radius) {
                return Err(Error::param("phantom.inner_radius", "must lie in (0, outer_radius)"));
            }
            if !fits(spec.outer_radius) {
                return Err(Error::param("phantom.outer_radius", "ring does not fit inside the image"));
            }
            let in_ring = |r, c| {
                let d = dist(r, c);
                d <= spec.outer_radius && d > spec.inner_radius
            };
            let in_gap = |r: usize, c: usize| {
                spec.kind == PhantomKind::FracturedRing
                    && in_ring(r, c)
                    && angular_distance(angle_deg(r as f64, c as f64, centre), spec.gap_direction)
                        <= spec.gap_degrees / 2.0
            };
            let blob_centre = {
                let a = 135f64.to_radians();
                (centre.0 - spec.blob_distance * a.sin(), centre.1 + spec.blob_distance * a.cos())
            };
            let in_blob = |r: usize, c: usize| {
                spec.kind == PhantomKind::RingWithBlob
                    && (r as f64 - blob_centre.0).hypot(c as f64 - blob_centre.1) <= spec.blob_radius
            };
            if spec.kind == PhantomKind::RingWithBlob {
                let reach = (blob_centre.0 - centre.0).abs().max((blob_centre.1 - centre.1).abs()) + spec.blob_radius;
                if !fits(reach) {
                    return Err(Error::param("phantom.blob_distance", "blob does not fit inside the image"));
                }
            }
            let image = ScalarField::from_fn(n, n, |r, c| {
                let d = dist(r, c);
                if in_gap(r, c) {
                    spec.background
                } else if in_ring(r, c) {
                    spec.cortical
                } else if d <= spec.inner_radius {
                    spec.interior
                } else if in_blob(r, c) {
                    spec.blob_gray
                } else {
                    spec.background
                }
            })?;
            ring_interior = Some(Mask::from_fn(n, n, |r, c| dist(r, c) <= spec.inner_radius)?);
            ring = Some(Mask::from_fn(n, n, in_ring)?);
            if spec.kind == PhantomKind::FracturedRing {
                gap = Some(Mask::from_fn(n, n, in_gap)?);
                prompt = Some(gap_prompt(spec, centre));
            }
            (image, Mask::from_fn(n, n, |r, c| dist(r, c) <= spec.outer_radius)?)
        }
        PhantomKind::Annulus => {
            if !(spec.inner_radius > 0.0 && spec.inner_radius < spec.outer_radius) {
                return Err(Error::param("phantom.inner_radius", "must lie in (0, outer_radius)"));
            }
            if !fits(spec.outer_radius) {
                return Err(Error::param("phantom.outer_radius", "annulus does not fit inside the image"));
            }
            let hole_gray = if spec.bright_hole { spec.cortical } else { spec.background };
            let image = ScalarField::from_fn(n, n, |r, c| {
                let d = dist(r, c);
                if d <= spec.inner_radius {
                    hole_gray
                } else if d <= spec.outer_radius {
                    spec.cortical
                } else {
                    spec.background
                }
            })?;
            ring_interior = Some(Mask::from_fn(n, n, |r, c| dist(r, c) <= spec.inner_radius)?);
            ring = Some(Mask::from_fn(n, n, |r, c| {
                let d = dist(r, c);
                d <= spec.outer_radius && d > spec.inner_radius
            })?);
            let truth = Mask::from_fn(n, n, |r, c| {
                let d = dist(r, c);
                d <= spec.outer_radius && (spec.bright_hole || d > spec.inner_radius)
            })?;
            (image, truth)
        }
        PhantomKind::TwoDisks => {
            if spec.disk_radius <= 0.0 || spec.disk_offset <= spec.disk_radius {
                return Err(Error::param("phantom.disk_offset", "disks must be separated"));
            }
            if !fits(spec.disk_offset + spec.disk_radius) {
                return Err(Error::param("phantom.disk_offset", "disks do not fit inside the image"));
            }
            let left = (centre.0, centre.1 - spec.disk_offset);
            let right = (centre.0, centre.1 + spec.disk_offset);
            let in_disk = |r: usize, c: usize| {
                let (rf, cf) = (r as f64, c as f64);
                (rf - left.0).hypot(cf - left.1) <= spec.disk_radius || (rf - right.0).hypot(cf - right.1) <= spec.disk_radius
            };
            let r0 = centre.0 as usize;
            let in_channel = |r: usize, c: usize| {
                (r0..r0 + spec.channel_width).contains(&r) && (c as f64) > left.1 && (c as f64) < right.1
            };
            let image = ScalarField::from_fn(n, n, |r, c| {
                if in_disk(r, c) || in_channel(r, c) {
                    spec.cortical
                } else {
                    spec.background
                }
            })?;
            (image, Mask::from_fn(n, n, |r, c| in_disk(r, c) || in_channel(r, c))?)
        }
    };

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param("phantom.noise_sigma", e.to_string()))?;
        let noisy: Vec<f64> = image
            .as_slice()
            .iter()
            .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 255.0))
            .collect();
        image = ScalarField::new(n, n, noisy)?;
    }

    Ok(Phantom {
        spec: *spec,
        image,
        truth,
        ring_interior,
        ring,
        gap,
        prompt,
    })
}

/// Polyline along the outer cortex spanning the gap plus a margin on both sides.
fn gap_prompt(spec: &PhantomSpec, centre: (f64, f64)) -> PromptSet {
    let radius = spec.outer_radius - 1.0;
    let span = spec.gap_degrees / 2.0 + 6.0;
    let steps = 6;
    let mut stroke: Vec<[i64; 2]> = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let a = (spec.gap_direction - span + 2.0 * span * i as f64 / steps as f64) * PI / 180.0;
        let r = (centre.0 - radius * a.sin()).round() as i64;
        let c = (centre.1 + radius * a.cos()).round() as i64;
        if stroke.last() != Some(&[r, c]) {
            stroke.push([r, c]);
        }
    }
    PromptSet { strokes: vec![stroke] }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_truth_is_full_disk() {
        let p = make_phantom(&PhantomSpec::new(PhantomKind::Ring)).unwrap();
        let expect = PI * 40.0 * 40.0;
        assert!((p.truth.count() as f64 - expect).abs() / expect < 0.02);
        let ring_area = PI * (40.0f64.powi(2) - 25.0f64.powi(2));
        let ring = p.ring.unwrap().count() as f64;
        assert!((ring - ring_area).abs() / ring_area < 0.02);
    }

    #[test]
    fn noise_free_is_reproducible_and_noisy_is_seeded() {
        let spec = PhantomSpec::new(PhantomKind::RingWithBlob);
        assert_eq!(make_phantom(&spec).unwrap().image, make_phantom(&spec).unwrap().image);
        let noisy = PhantomSpec {
            noise_sigma: 5.0,
            seed: 7,
            ..spec
        };
        let a = make_phantom(&noisy).unwrap();
        assert_eq!(a.image, make_phantom(&noisy).unwrap().image);
        let other = make_phantom(&PhantomSpec { seed: 8, ..noisy }).unwrap();
        assert_ne!(a.image, other.image);
    }

    #[test]
    fn fractured_gap_is_arc_fraction() {
        let p = make_phantom(&PhantomSpec::new(PhantomKind::FracturedRing)).unwrap();
        let gap = p.gap.unwrap().count() as f64;
        let ring = p.ring.unwrap().count() as f64;
        let expect = ring * 45.0 / 360.0;
        assert!((gap - expect).abs() / expect < 0.05, "{gap} vs {expect}");
        let prompt = p.prompt.unwrap();
        prompt.validate(128, 128).unwrap();
    }

    #[test]
    fn geometry_must_fit() {
        let spec = PhantomSpec {
            outer_radius: 70.0,
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&spec).is_err());
        let spec = PhantomSpec {
            inner_radius: 45.0,
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn two_disks_truth_is_connected_by_channel() {
        let p = make_phantom(&PhantomSpec::new(PhantomKind::TwoDisks)).unwrap();
        assert!(p.truth.get(64, 64) && p.truth.get(65, 64));
        assert!(!p.truth.get(66, 64) && !p.truth.get(63, 64));
    }
}
