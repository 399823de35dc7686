//! Interchange formats: PNG slices and masks, raw float rasters, contour JSON.
//!
//! 8-bit grayscale PNGs are taken as already-windowed gray levels. 16-bit
//! PNGs hold raw CT values and need a JSON sidecar declaring the offset that
//! turns stored values into HU (`HU = stored + hu_offset`).
//!
//! Raster layout (little endian):
//!
//! ```text
//! magic  b"FGRS"
//! u8     bytes per sample (4 = f32, 8 = f64)
//! [u8;3] reserved, zero
//! u32    width
//! u32    height
//! ...    width * height samples, row major
//! ```

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::contour::Polyline;
use crate::error::{Error, Result};
use crate::grid::{CtSlice, Mask, ScalarField};
use crate::pipeline::Input;

/// Metadata accompanying a 16-bit slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub hu_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing: Option<f64>,
}

impl Sidecar {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let s: Sidecar = serde_json::from_slice(bytes)?;
        if !s.hu_offset.is_finite() {
            return Err(Error::param("hu_offset", "must be finite"));
        }
        Ok(s)
    }
}

/// Sidecar location for an image: the image path with `.json` appended.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Decodes a PNG slice. `sidecar` is required for 16-bit images and ignored otherwise.
pub fn decode_png(bytes: &[u8], sidecar: Option<&Sidecar>) -> Result<Input> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    if sixteen {
        let side = sidecar.ok_or_else(|| Error::param("hu_offset", "16-bit slices need a sidecar declaring hu_offset"))?;
        let raw = img.into_luma16();
        let data = raw.as_raw().iter().map(|&v| v as f64 + side.hu_offset).collect();
        Ok(Input::Ct(CtSlice::new(ScalarField::new(w, h, data)?, side.pixel_spacing)?))
    } else {
        let raw = img.into_luma8();
        let data = raw.as_raw().iter().map(|&v| v as f64).collect();
        Ok(Input::Windowed(ScalarField::new(w, h, data)?))
    }
}

/// 16-bit PNG of HU values stored as `HU - hu_offset`, rounded and clamped to the u16 range.
pub fn encode_ct_png(ct: &CtSlice, hu_offset: f64) -> Result<Vec<u8>> {
    let f = ct.field();
    let data = f
        .as_slice()
        .iter()
        .map(|&v| (v - hu_offset).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(f.width() as u32, f.height() as u32, data)
        .expect("buffer size matches");
    png_bytes(DynamicImage::ImageLuma16(img))
}

/// Reads a slice and, if present, its sidecar.
pub fn read_image(path: &Path) -> Result<Input> {
    let bytes = std::fs::read(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(Sidecar::from_json(&std::fs::read(&side)?)?)
    } else {
        None
    };
    decode_png(&bytes, sidecar.as_ref())
}

fn png_bytes(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit grayscale PNG of gray levels, rounded and clamped to `[0, 255]`.
pub fn encode_gray_png(field: &ScalarField) -> Result<Vec<u8>> {
    encode_field_png(field, (0.0, 255.0))
}

/// 8-bit PNG mapping `range.0` to black and `range.1` to white.
pub fn encode_field_png(field: &ScalarField, range: (f64, f64)) -> Result<Vec<u8>> {
    let (lo, hi) = range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = field
        .as_slice()
        .iter()
        .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = GrayImage::from_raw(field.width() as u32, field.height() as u32, data).expect("buffer size matches");
    png_bytes(DynamicImage::ImageLuma8(img))
}

/// 8-bit PNG with the field's own minimum and maximum as black and white.
pub fn encode_field_png_minmax(field: &ScalarField) -> Result<Vec<u8>> {
    encode_field_png(field, (field.min(), field.max()))
}

/// Mask as 0/255 grayscale PNG.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let data = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("buffer size matches");
    png_bytes(DynamicImage::ImageLuma8(img))
}

/// Mask from any PNG; nonzero gray is inside.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma8();
    let data = img.as_raw().iter().map(|&v| v != 0).collect();
    Mask::new(img.width() as usize, img.height() as usize, data)
}

/// Gray image with contour vertices drawn in red.
pub fn encode_overlay_png(image: &ScalarField, polylines: &[Polyline]) -> Result<Vec<u8>> {
    let (w, h) = image.dims();
    let mut img = RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let g = image.get(r as usize, c as usize).round().clamp(0.0, 255.0) as u8;
        Rgb([g, g, g])
    });
    for line in polylines {
        for pair in line.windows(2) {
            // sample each segment densely enough to leave no gaps
            let n = ((pair[1][0] - pair[0][0]).abs().max((pair[1][1] - pair[0][1]).abs()).ceil() as usize).max(1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let r = (pair[0][0] + t * (pair[1][0] - pair[0][0])).round();
                let c = (pair[0][1] + t * (pair[1][1] - pair[0][1])).round();
                if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
                    img.put_pixel(c as u32, r as u32, Rgb([255, 0, 0]));
                }
            }
        }
        if let [p] = line.as_slice() {
            let (r, c) = (p[0].round() as usize, p[1].round() as usize);
            if r < h && c < w {
                img.put_pixel(c as u32, r as u32, Rgb([255, 0, 0]));
            }
        }
    }
    png_bytes(DynamicImage::ImageRgb8(img))
}

const RASTER_MAGIC: &[u8; 4] = b"FGRS";
const RASTER_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterType {
    F32,
    F64,
}

pub fn encode_raster(field: &ScalarField, ty: RasterType) -> Vec<u8> {
    let size = match ty {
        RasterType::F32 => 4,
        RasterType::F64 => 8,
    };
    let mut out = Vec::with_capacity(RASTER_HEADER + size * field.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&[size as u8, 0, 0, 0]);
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    for &v in field.as_slice() {
        match ty {
            RasterType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            RasterType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<ScalarField> {
    if bytes.len() < RASTER_HEADER {
        return Err(Error::Raster("truncated header".into()));
    }
    if &bytes[..4] != RASTER_MAGIC {
        return Err(Error::Raster("bad magic".into()));
    }
    let size = bytes[4] as usize;
    if size != 4 && size != 8 {
        return Err(Error::Raster(format!("unsupported sample size {size}")));
    }
    if bytes[5..8] != [0, 0, 0] {
        return Err(Error::Raster("reserved bytes must be zero".into()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(size))
        .ok_or_else(|| Error::Raster("dimensions overflow".into()))?;
    let body = &bytes[RASTER_HEADER..];
    if body.len() != n {
        return Err(Error::Raster(format!("expected {n} data bytes, found {}", body.len())));
    }
    let data = body
        .chunks_exact(size)
        .map(|ch| match size {
            4 => f32::from_le_bytes(ch.try_into().expect("4 bytes")) as f64,
            _ => f64::from_le_bytes(ch.try_into().expect("8 bytes")),
        })
        .collect();
    ScalarField::new(w, h, data)
}

/// Contour snapshot as written to disk and served over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourDoc {
    pub iteration: usize,
    pub polylines: Vec<Polyline>,
}
