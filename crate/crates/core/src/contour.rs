//! Zero-crossing extraction on the pixel lattice.

use std::collections::HashMap;

use crate::grid::ScalarField;

/// Sequence of `[row, col]` points; closed loops repeat their first point at the end.
pub type Polyline = Vec<[f64; 2]>;

#[inline]
fn inside(v: f64) -> bool {
    v <= 0.0
}

/// Interpolated crossing between lattice values `a` and `b`, as a fraction from `a`.
#[inline]
fn crossing(a: f64, b: f64) -> f64 {
    let t = a / (a - b);
    t.clamp(0.0, 1.0)
}

/// Every point where the zero level crosses a horizontal or vertical lattice edge.
pub fn edge_crossings(phi: &ScalarField) -> Vec<[f64; 2]> {
    let (w, h) = phi.dims();
    let mut pts = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let a = phi.get(r, c);
            if c + 1 < w {
                let b = phi.get(r, c + 1);
                if inside(a) != inside(b) {
                    pts.push([r as f64, c as f64 + crossing(a, b)]);
                }
            }
            if r + 1 < h {
                let b = phi.get(r + 1, c);
                if inside(a) != inside(b) {
                    pts.push([r as f64 + crossing(a, b), c as f64]);
                }
            }
        }
    }
    pts
}

/// Lattice edge identifier: `(row, col, vertical)` of its first endpoint.
type EdgeId = (usize, usize, bool);

/// Marching squares over the cells spanned by adjacent pixel centres.
///
/// Saddle cells are disambiguated by the mean of the four corners.
pub fn marching_squares(phi: &ScalarField) -> Vec<Polyline> {
    let (w, h) = phi.dims();
    let point = |e: EdgeId| -> [f64; 2] {
        let (r, c, vertical) = e;
        if vertical {
            let t = crossing(phi.get(r, c), phi.get(r + 1, c));
            [r as f64 + t, c as f64]
        } else {
            let t = crossing(phi.get(r, c), phi.get(r, c + 1));
            [r as f64, c as f64 + t]
        }
    };

    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let tl = phi.get(r, c);
            let tr = phi.get(r, c + 1);
            let br = phi.get(r + 1, c + 1);
            let bl = phi.get(r + 1, c);
            let code = (inside(tl) as u8) << 3 | (inside(tr) as u8) << 2 | (inside(br) as u8) << 1 | inside(bl) as u8;
            let top = (r, c, false);
            let bottom = (r + 1, c, false);
            let left = (r, c, true);
            let right = (r, c + 1, true);
            match code {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((top, right)),
                6 | 9 => segments.push((top, bottom)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    // code 5: tr and bl inside; code 10: tl and br inside
                    let centre_inside = inside(0.25 * (tl + tr + br + bl));
                    if (code == 5) == centre_inside {
                        // tl and br corners are cut off
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((top, right));
                        segments.push((left, bottom));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    chain(segments).into_iter().map(|ids| ids.into_iter().map(point).collect()).collect()
}

/// Joins segments sharing lattice edges into maximal chains.
fn chain(segments: Vec<(EdgeId, EdgeId)>) -> Vec<Vec<EdgeId>> {
    let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (i, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(i);
        by_edge.entry(*b).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let other = |seg: usize, from: EdgeId| -> EdgeId {
        let (a, b) = segments[seg];
        if a == from {
            b
        } else {
            a
        }
    };
    let next_unused = |used: &[bool], at: EdgeId| -> Option<usize> {
        by_edge.get(&at).and_then(|v| v.iter().copied().find(|&s| !used[s]))
    };

    // open chains start at edges touched by a single segment (the frame)
    let mut starts: Vec<EdgeId> = by_edge.iter().filter(|(_, v)| v.len() == 1).map(|(k, _)| *k).collect();
    starts.sort_unstable();
    for start in starts {
        let Some(first) = next_unused(&used, start) else { continue };
        let mut ids = vec![start];
        let mut seg = first;
        let mut at = start;
        loop {
            used[seg] = true;
            at = other(seg, at);
            ids.push(at);
            match next_unused(&used, at) {
                Some(s) => seg = s,
                None => break,
            }
        }
        out.push(ids);
    }
    for i in 0..segments.len() {
        if used[i] {
            continue;
        }
        let start = segments[i].0;
        let mut ids = vec![start];
        let mut seg = i;
        let mut at = start;
        loop {
            used[seg] = true;
            at = other(seg, at);
            ids.push(at);
            match next_unused(&used, at) {
                Some(s) => seg = s,
                None => break,
            }
        }
        out.push(ids);
    }
    out
}
