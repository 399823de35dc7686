//! Two-dimensional scalar and boolean fields over the image domain, plus the
//! finite-difference and convolution operators the solver is built on.
//!
//! Fields are indexed `(row, col)` and stored row-major. Every operator uses
//! replicate-edge (Neumann) boundary handling.

use crate::error::{Error, Result};

/// Smallest admissible side length; stencils need a one-pixel margin.
pub const MIN_SIDE: usize = 3;

/// A real-valued field over a `height x width` pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::param(
                "data",
                format!("length {} does not match {}x{}", data.len(), width, height),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("data", format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a field by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    /// Pixelwise map; output shares this field's shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| sanitize(f(v))).collect(),
        }
    }

    /// Pixelwise combination of two same-shaped fields.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.check_same(other.dims())?;
        Ok(ScalarField {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| sanitize(f(a, b)))
                .collect(),
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Replicate-edge lookup for signed coordinates.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_same(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::Shape {
                expected: self.dims(),
                got: other,
            });
        }
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { width, height, data }
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else if v.is_nan() {
        0.0
    } else {
        v.signum() * f64::MAX
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::param(
            "dims",
            format!("field must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"),
        ));
    }
    Ok(())
}

/// A boolean field (characteristic function of a pixel set).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::param(
                "data",
                format!("length {} does not match {}x{}", data.len(), width, height),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    /// Pixels where `field` satisfies `pred`.
    pub fn threshold(field: &ScalarField, pred: impl Fn(f64) -> bool) -> Mask {
        Mask {
            width: field.width,
            height: field.height,
            data: field.data.iter().map(|&v| pred(v)).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Coordinates `(row, col)` of set pixels in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.combine(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.combine(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.combine(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Number of pixels where the two masks disagree.
    pub fn xor_count(&self, other: &Mask) -> Result<usize> {
        self.check_same(other.dims())?;
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }

    fn combine(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_same(other.dims())?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn check_same(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::Shape {
                expected: self.dims(),
                got: other,
            });
        }
        Ok(())
    }

    pub fn to_field(&self, on: f64, off: f64) -> ScalarField {
        ScalarField::from_parts_unchecked(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { on } else { off }).collect(),
        )
    }
}

/// HU bounds of the 16-bit signed range raw slices are clamped to.
pub const HU_MIN: f64 = -32768.0;
pub const HU_MAX: f64 = 32767.0;

/// A raw CT slice in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSlice {
    field: ScalarField,
    pixel_spacing: f64,
}

impl CtSlice {
    /// Values outside the 16-bit HU range are clamped on ingest.
    pub fn new(field: ScalarField, pixel_spacing: Option<f64>) -> Result<Self> {
        let spacing = pixel_spacing.unwrap_or(1.0);
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::param("pixel_spacing", "must be positive"));
        }
        Ok(Self {
            field: field.map(|v| v.clamp(HU_MIN, HU_MAX)),
            pixel_spacing: spacing,
        })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }
}

/// Square convolution kernel with odd side length, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::param("kernel_size", format!("must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::param(
                "kernel_weights",
                format!("expected {} taps, got {}", size * size, weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("kernel_weights", "non-finite tap"));
        }
        Ok(Self { size, weights })
    }

    /// `size x size` box filter.
    pub fn average(size: usize) -> Result<Self> {
        let n = (size * size) as f64;
        Self::new(size, vec![1.0 / n; size * size])
    }

    pub fn identity(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[size * size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    /// Normalized truncated Gaussian.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
        }
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::param("kernel_size", format!("must be odd, got {size}")));
        }
        let half = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let dy = r as f64 - half;
                let dx = c as f64 - half;
                w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.size + c]
    }
}

/// Per-axis derivatives: `gx` along columns, `gy` along rows.
///
/// Central differences in the interior and one-sided differences on the frame.
pub fn gradient(f: &ScalarField) -> (ScalarField, ScalarField) {
    let (w, h) = f.dims();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gx[i] = if c == 0 {
                f.get(r, 1) - f.get(r, 0)
            } else if c == w - 1 {
                f.get(r, w - 1) - f.get(r, w - 2)
            } else {
                0.5 * (f.get(r, c + 1) - f.get(r, c - 1))
            };
            gy[i] = if r == 0 {
                f.get(1, c) - f.get(0, c)
            } else if r == h - 1 {
                f.get(h - 1, c) - f.get(h - 2, c)
            } else {
                0.5 * (f.get(r + 1, c) - f.get(r - 1, c))
            };
        }
    }
    (
        ScalarField::from_parts_unchecked(w, h, gx),
        ScalarField::from_parts_unchecked(w, h, gy),
    )
}

/// `|grad f|` from [`gradient`].
pub fn gradient_norm(f: &ScalarField) -> ScalarField {
    let (gx, gy) = gradient(f);
    let data = gx
        .as_slice()
        .iter()
        .zip(gy.as_slice())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    ScalarField::from_parts_unchecked(f.width(), f.height(), data)
}

/// Correlation of `f` with `k` (identical to convolution for the symmetric
/// kernels used here), replicating edge pixels outside the frame.
pub fn convolve(f: &ScalarField, k: &Kernel) -> ScalarField {
    let (w, h) = f.dims();
    let half = (k.size() / 2) as isize;
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for kr in 0..k.size() {
                for kc in 0..k.size() {
                    let wgt = k.weight(kr, kc);
                    if wgt != 0.0 {
                        acc += wgt * f.get_clamped(r + kr as isize - half, c + kc as isize - half);
                    }
                }
            }
            out.push(acc);
        }
    }
    ScalarField::from_parts_unchecked(w, h, out)
}

/// Gaussian pre-smoothing used by the classical edge detector.
pub fn gaussian_smooth(f: &ScalarField, size: usize, sigma: f64) -> Result<ScalarField> {
    Ok(convolve(f, &Kernel::gaussian(size, sigma)?))
}
