//! Overlap and boundary-distance metrics between a ground truth and a prediction.
//!
//! Dice and Jaccard are reported in percent. Two empty masks agree perfectly
//! (100). Boundary metrics use the mask pixels that have at least one
//! 4-neighbour outside the mask (pixels beyond the frame count as outside),
//! with Euclidean distances between pixel centres.

use serde::{Deserialize, Serialize};

use crate::edges::squared_edt;
use crate::error::{Error, Result};
use crate::grid::Mask;

#[derive(Debug, Clone, Copy)]
pub struct MaskPair<'a> {
    pub ground_truth: &'a Mask,
    pub prediction: &'a Mask,
}

impl<'a> MaskPair<'a> {
    pub fn new(ground_truth: &'a Mask, prediction: &'a Mask) -> Result<Self> {
        ground_truth.check_same(prediction.dims())?;
        Ok(Self {
            ground_truth,
            prediction,
        })
    }

    fn counts(&self) -> (usize, usize, usize) {
        let g = self.ground_truth.as_slice();
        let s = self.prediction.as_slice();
        let inter = g.iter().zip(s).filter(|(&a, &b)| a && b).count();
        (self.ground_truth.count(), self.prediction.count(), inter)
    }
}

pub fn dice(p: MaskPair<'_>) -> f64 {
    let (g, s, inter) = p.counts();
    if g + s == 0 {
        return 100.0;
    }
    100.0 * 2.0 * inter as f64 / (g + s) as f64
}

pub fn jaccard(p: MaskPair<'_>) -> f64 {
    let (g, s, inter) = p.counts();
    let union = g + s - inter;
    if union == 0 {
        return 100.0;
    }
    100.0 * inter as f64 / union as f64
}

/// Mask pixels with at least one 4-neighbour outside the mask.
pub fn boundary(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    let mut out = Mask::empty(w, h).expect("same dims as a valid mask");
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1);
            if edge {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Distances from each boundary pixel of `from` to the boundary of `to`.
fn directed(from: &Mask, to: &Mask) -> Vec<f64> {
    let sq = squared_edt(to);
    let w = from.width();
    from.points().map(|(r, c)| sq[r * w + c].sqrt()).collect()
}

fn boundaries(p: &MaskPair<'_>) -> Result<(Mask, Mask)> {
    if p.ground_truth.is_all_false() {
        return Err(Error::UndefinedBoundaryMetric("ground-truth"));
    }
    if p.prediction.is_all_false() {
        return Err(Error::UndefinedBoundaryMetric("prediction"));
    }
    Ok((boundary(p.ground_truth), boundary(p.prediction)))
}

/// Symmetric Hausdorff distance between the two boundaries, in pixels.
pub fn hausdorff(p: MaskPair<'_>) -> Result<f64> {
    let (bg, bs) = boundaries(&p)?;
    let a = directed(&bg, &bs).into_iter().fold(0.0, f64::max);
    let b = directed(&bs, &bg).into_iter().fold(0.0, f64::max);
    Ok(a.max(b))
}

/// Average symmetric surface distance, in pixels.
pub fn assd(p: MaskPair<'_>) -> Result<f64> {
    let (bg, bs) = boundaries(&p)?;
    let a = directed(&bg, &bs);
    let b = directed(&bs, &bg);
    let n = (a.len() + b.len()) as f64;
    Ok((a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n)
}

/// All four metrics; boundary metrics are `None` when a mask is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub jaccard: f64,
    pub hd: Option<f64>,
    pub assd: Option<f64>,
}

/// Boundary metrics are multiplied by `spacing` (mm per pixel, 1.0 for pixels).
pub fn evaluate(p: MaskPair<'_>, spacing: f64) -> MetricReport {
    MetricReport {
        dice: dice(p),
        jaccard: jaccard(p),
        hd: hausdorff(p).ok().map(|v| v * spacing),
        assd: assd(p).ok().map(|v| v * spacing),
    }
}
