//! CT windowing, gray-level separation of soft tissue and bone, and the
//! intensity-aware edge detector.
//!
//! Given the practicable bone-window ranges `[w1, w2] x [l1, l2]` and the HU
//! bounds `S` (soft tissue, upper) and `B` (bone, lower), the worst-case gray
//! levels are
//!
//! ```text
//! theta1 = max m(z; ww, wl)  over z <= S and all admissible windows
//! theta2 = min m(z; ww, wl)  over z >= B and all admissible windows
//! ```
//!
//! Both have closed forms: `theta1 = m(S; w2, l1)`, and `theta2 = m(B; w2, l2)`
//! when `B >= l2`, else `m(B; w1, l2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_smooth, gradient_norm, CtSlice, ScalarField};

pub const GRAY_MAX: f64 = 255.0;

/// Piecewise-linear window mapping of a HU value to a gray level in `[0, 255]`.
pub fn grayscale_map(z: f64, ww: f64, wl: f64) -> Result<f64> {
    if !(ww.is_finite() && ww > 0.0) {
        return Err(Error::param("window.width", format!("must be positive, got {ww}")));
    }
    Ok(map_unchecked(z, ww, wl))
}

#[inline]
fn map_unchecked(z: f64, ww: f64, wl: f64) -> f64 {
    if z >= wl + ww / 2.0 {
        GRAY_MAX
    } else if z < wl - ww / 2.0 {
        0.0
    } else {
        (GRAY_MAX / ww * (z - wl) + GRAY_MAX / 2.0).clamp(0.0, GRAY_MAX)
    }
}

/// Display window `(width, level)` in HU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub width: f64,
    pub level: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self {
            width: 1500.0,
            level: 300.0,
        }
    }
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::param("window.width", "must be positive"));
        }
        if !self.level.is_finite() {
            return Err(Error::param("window.level", "must be finite"));
        }
        Ok(())
    }

    pub fn apply(&self, slice: &CtSlice) -> Result<ScalarField> {
        self.validate()?;
        Ok(slice.field().map(|z| map_unchecked(z, self.width, self.level)))
    }

    /// Inverse of the linear branch: the HU value mapped to gray level `g`.
    pub fn gray_to_hu(&self, g: f64) -> f64 {
        (g - GRAY_MAX / 2.0) * self.width / GRAY_MAX + self.level
    }
}

/// Practicable bone-window ranges and tissue HU bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneWindowSpec {
    pub w1: f64,
    pub w2: f64,
    pub l1: f64,
    pub l2: f64,
    /// Upper HU bound for soft tissue.
    #[serde(rename = "soft_tissue_max")]
    pub s: f64,
    /// Lower HU bound for bone.
    #[serde(rename = "bone_min")]
    pub b: f64,
}

impl Default for BoneWindowSpec {
    /// Pelvis/ankle bone window.
    fn default() -> Self {
        Self {
            w1: 1000.0,
            w2: 1500.0,
            l1: 250.0,
            l2: 350.0,
            s: 100.0,
            b: 300.0,
        }
    }
}

impl BoneWindowSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.l1, self.l2, self.s, self.b];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("bone_window", "all bounds must be finite"));
        }
        if self.w1 <= 0.0 {
            return Err(Error::param("bone_window.w1", "must be positive"));
        }
        if self.w1 > self.w2 {
            return Err(Error::param("bone_window.w2", "must be >= w1"));
        }
        if self.l1 > self.l2 {
            return Err(Error::param("bone_window.l2", "must be >= l1"));
        }
        if self.s > self.l1 {
            return Err(Error::param("bone_window.soft_tissue_max", "must be <= l1"));
        }
        Ok(())
    }

    /// Worst-case (largest) soft-tissue gray level over all admissible windows.
    pub fn theta1(&self) -> f64 {
        map_unchecked(self.s, self.w2, self.l1)
    }

    /// Worst-case (smallest) bone gray level over all admissible windows.
    pub fn theta2(&self) -> f64 {
        if self.b >= self.l2 {
            map_unchecked(self.b, self.w2, self.l2)
        } else {
            map_unchecked(self.b, self.w1, self.l2)
        }
    }

    /// Whether the sufficient condition for `theta1 <= theta2` holds.
    pub fn separates(&self) -> bool {
        self.b >= self.l2 || (self.s - self.l1) / self.w2 <= (self.b - self.l2) / self.w1
    }
}

pub fn compute_theta1(spec: &BoneWindowSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.theta1())
}

pub fn compute_theta2(spec: &BoneWindowSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.theta2())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    pub separated: bool,
    pub theta1: f64,
    pub theta2: f64,
}

pub fn check_separation(spec: &BoneWindowSpec) -> Result<Separation> {
    spec.validate()?;
    Ok(Separation {
        separated: spec.separates(),
        theta1: spec.theta1(),
        theta2: spec.theta2(),
    })
}

/// Optional Gaussian pre-smoothing before the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presmooth {
    pub size: usize,
    pub sigma: f64,
}

impl Default for Presmooth {
    fn default() -> Self {
        Self { size: 9, sigma: 1.5 }
    }
}

/// `g = 1 / (1 + |grad I|^2)`.
pub fn edge_detector_classical(image: &ScalarField, presmooth: Option<Presmooth>) -> Result<ScalarField> {
    let smoothed;
    let src = match presmooth {
        Some(p) => {
            smoothed = gaussian_smooth(image, p.size, p.sigma)?;
            &smoothed
        }
        None => image,
    };
    Ok(gradient_norm(src).map(|n| 1.0 / (1.0 + n * n)))
}

/// Parameters of the two high-pass filters `f(z) = ((z - eps)_+)^delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeDetectorParams {
    pub eps1: f64,
    pub eps2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma: f64,
    /// Off unless set; the detector works on the windowed image directly.
    pub presmooth: Option<Presmooth>,
}

impl Default for EdgeDetectorParams {
    fn default() -> Self {
        Self {
            eps1: 102.0,
            eps2: 13.0,
            delta1: 1.0,
            delta2: 2.0,
            gamma: 1.0,
            presmooth: None,
        }
    }
}

impl EdgeDetectorParams {
    /// Checks exponents and weight, and the threshold ranges implied by `spec`.
    ///
    /// Threshold ranges use the gray-level bounds rounded to whole gray levels,
    /// so `eps2 = 13` is admissible for the default window where the unrounded
    /// gap is 12.75.
    pub fn validate(&self, spec: &BoneWindowSpec) -> Result<()> {
        self.validate_shape()?;
        let t1 = spec.theta1().round();
        let t2 = spec.theta2().round();
        if !(t1..=t2).contains(&self.eps1) {
            return Err(Error::param("detector.eps1", format!("must lie in [{t1}, {t2}]")));
        }
        if !(0.0..=(t2 - t1)).contains(&self.eps2) {
            return Err(Error::param("detector.eps2", format!("must lie in [0, {}]", t2 - t1)));
        }
        Ok(())
    }

    pub fn validate_shape(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.delta1) {
            return Err(Error::param("detector.delta1", "must be positive"));
        }
        if !pos(self.delta2) {
            return Err(Error::param("detector.delta2", "must be positive"));
        }
        if !pos(self.gamma) {
            return Err(Error::param("detector.gamma", "must be positive"));
        }
        if !self.eps1.is_finite() || !self.eps2.is_finite() {
            return Err(Error::param("detector.eps1", "thresholds must be finite"));
        }
        if let Some(p) = self.presmooth {
            if p.size % 2 == 0 || !(p.sigma > 0.0) {
                return Err(Error::param("detector.presmooth", "size must be odd and sigma positive"));
            }
        }
        Ok(())
    }

    /// Pointwise value for gray level `intensity` and gradient norm `grad`.
    #[inline]
    pub fn eval(&self, intensity: f64, grad: f64) -> f64 {
        let f1 = (intensity - self.eps1).max(0.0).powf(self.delta1);
        let f2 = (grad - self.eps2).max(0.0).powf(self.delta2);
        1.0 / (1.0 + f1) + self.gamma / (1.0 + f2)
    }
}

/// Intensity-aware edge detector on a windowed gray-level image.
pub fn edge_detector_proposed(image: &ScalarField, p: &EdgeDetectorParams) -> Result<ScalarField> {
    p.validate_shape()?;
    let norm = match p.presmooth {
        Some(ps) => gradient_norm(&gaussian_smooth(image, ps.size, ps.sigma)?),
        None => gradient_norm(image),
    };
    image.zip_map(&norm, |i, g| p.eval(i, g))
}
