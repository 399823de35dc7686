//! End-to-end segmentation: window, initial box, fields, evolution,
//! extraction and optional post-processing.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, PipelineConfig, PlateauConfig};
use crate::contour::Polyline;
use crate::edges::{self, DistanceField, EdgeSet, PromptSet};
use crate::error::{Error, Result, ResultExt, Stage};
use crate::grid::{CtSlice, Kernel, Mask, ScalarField};
use crate::io::ContourDoc;
use crate::knowledge;
use crate::levelset::{self, BoxRegion, EvolutionParams, EvolutionState};

/// Pipeline input: raw HU or an already windowed gray-level image.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Ct(CtSlice),
    Windowed(ScalarField),
}

impl Input {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Input::Ct(ct) => ct.field().dims(),
            Input::Windowed(f) => f.dims(),
        }
    }

    pub fn pixel_spacing(&self) -> f64 {
        match self {
            Input::Ct(ct) => ct.pixel_spacing(),
            Input::Windowed(_) => 1.0,
        }
    }

    /// Gray-level image; CT input goes through `window`.
    pub fn windowed(&self, window: &knowledge::Window) -> Result<ScalarField> {
        match self {
            Input::Ct(ct) => window.apply(ct),
            Input::Windowed(f) => Ok(f.clone()),
        }
    }
}

/// Bounding box of `{I >= thresh}` grown by `margin`, kept one pixel inside the frame.
pub fn auto_init_box(image: &ScalarField, thresh: f64, margin: usize) -> Result<BoxRegion> {
    let (w, h) = image.dims();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..h {
        for c in 0..w {
            if image.get(r, c) >= thresh {
                bounds = Some(match bounds {
                    None => (r, c, r, c),
                    Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                });
            }
        }
    }
    let (r0, c0, r1, c1) = bounds.ok_or(Error::NoBoneCandidate { threshold: thresh })?;
    let b = BoxRegion::new(
        r0.saturating_sub(margin).max(1),
        c0.saturating_sub(margin).max(1),
        (r1 + margin).min(h - 2),
        (c1 + margin).min(w - 2),
    );
    b.validate(w, h)?;
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl FieldStats {
    pub fn of(f: &ScalarField) -> Self {
        Self {
            min: f.min(),
            max: f.max(),
            mean: f.as_slice().iter().sum::<f64>() / f.len() as f64,
        }
    }
}

/// Frozen inputs of the evolution.
#[derive(Debug, Clone)]
pub struct Fields {
    pub mode: Mode,
    /// Windowed gray levels.
    pub image: ScalarField,
    pub init_box: BoxRegion,
    pub phi0: ScalarField,
    pub roi: Mask,
    pub g: ScalarField,
    /// Canny output before filtering (FI-GAC mode only).
    pub all_edges: Option<EdgeSet>,
    /// Filtered bone edges, without prompts.
    pub bone_edges: Option<EdgeSet>,
    /// Bone edges plus rasterized prompts.
    pub stopping: Option<EdgeSet>,
    pub beta: Option<DistanceField>,
    pub prompts: PromptSet,
    pub timings_ms: BTreeMap<String, f64>,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().at(stage);
    *timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64() * 1e3;
    out
}

/// Computes every frozen field for `input` under `cfg`.
pub fn prepare(input: &Input, cfg: &PipelineConfig) -> Result<Fields> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let image = timed(&mut timings, Stage::Window, || input.windowed(&cfg.window))?;
    let (w, h) = image.dims();

    let (init_box, phi0) = timed(&mut timings, Stage::Initialization, || {
        let b = match cfg.init_box {
            Some(b) => {
                b.validate(w, h)?;
                b
            }
            None => {
                let thresh = cfg.init_threshold.unwrap_or_else(|| cfg.spec.theta2());
                auto_init_box(&image, thresh, cfg.init_margin)?
            }
        };
        Ok((b, levelset::signed_distance_from_box(w, h, b)?))
    })?;
    let roi = levelset::extract_mask(&phi0);

    let g = timed(&mut timings, Stage::EdgeDetector, || match cfg.mode {
        Mode::Figac => knowledge::edge_detector_proposed(&image, &cfg.detector),
        Mode::Classical => {
            let scaled = image.map(|v| v * cfg.classical_scale);
            knowledge::edge_detector_classical(&scaled, cfg.classical_presmooth)
        }
    })?;

    let mut fields = Fields {
        mode: cfg.mode,
        image,
        init_box,
        phi0,
        roi,
        g,
        all_edges: None,
        bone_edges: None,
        stopping: None,
        beta: None,
        prompts: PromptSet::default(),
        timings_ms: timings,
    };
    if cfg.mode == Mode::Figac {
        let mut t = std::mem::take(&mut fields.timings_ms);
        timed(&mut t, Stage::DistanceFactor, || {
            let all = edges::canny(&fields.image, cfg.canny)?;
            let kernel = Kernel::average(cfg.kernel_size)?;
            let bone = edges::filter_bone_edges(&all, &fields.image, &fields.roi, &kernel, cfg.eta)?;
            fields.all_edges = Some(all);
            fields.bone_edges = Some(bone);
            fields.set_prompts(&cfg.prompts)
        })?;
        fields.timings_ms = t;
    } else {
        cfg.prompts.validate(w, h).at(Stage::DistanceFactor)?;
        fields.prompts = cfg.prompts.clone();
    }
    Ok(fields)
}

impl Fields {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Replaces the prompt set and recomputes the stopping set and distance factor.
    /// Classical mode keeps the prompts but has no distance factor to update.
    pub fn set_prompts(&mut self, prompts: &PromptSet) -> Result<()> {
        let (w, h) = self.dims();
        prompts.validate(w, h)?;
        if let Some(bone) = &self.bone_edges {
            let stopping = edges::embed_prompts(bone, prompts)?;
            let beta = edges::distance_factor(&stopping)?;
            self.stopping = Some(stopping);
            self.beta = Some(beta);
        }
        self.prompts = prompts.clone();
        Ok(())
    }

    pub fn is_figac(&self) -> bool {
        self.mode == Mode::Figac
    }
}

/// Steps the evolution with periodic redistancing and an optional plateau test.
#[derive(Debug, Clone)]
pub struct Runner {
    pub state: EvolutionState,
    figac: bool,
    plateau: Option<PlateauConfig>,
    checkpoint: Option<Mask>,
    pub converged_at: Option<usize>,
}

impl Runner {
    pub fn new(fields: &Fields, cfg: &PipelineConfig) -> Result<Self> {
        Self::resume(fields, cfg, fields.phi0.clone(), 0)
    }

    /// Continues from a stored level set at iteration `iter`.
    pub fn resume(fields: &Fields, cfg: &PipelineConfig, phi: ScalarField, iter: usize) -> Result<Self> {
        let mut state =
            EvolutionState::new(phi, fields.g.clone(), fields.beta.clone(), cfg.evolution).at(Stage::Evolution)?;
        state.iter = iter;
        Ok(Self {
            state,
            figac: fields.is_figac(),
            plateau: cfg.plateau,
            checkpoint: None,
            converged_at: None,
        })
    }

    /// Swaps in a recomputed distance factor; the level set is kept.
    pub fn set_beta(&mut self, beta: Option<DistanceField>) {
        self.state.beta = beta;
    }

    pub fn iter(&self) -> usize {
        self.state.iter
    }

    /// One step; returns true once the plateau detector fires.
    pub fn step(&mut self) -> Result<bool> {
        self.state.advance(self.figac).at(Stage::Evolution)?;
        if let Some(p) = self.plateau {
            if self.state.iter.is_multiple_of(p.window) {
                let mask = self.state.mask();
                if let Some(prev) = &self.checkpoint {
                    let changed = mask.xor_count(prev)? as f64;
                    if changed <= p.tolerance * mask.count().max(1) as f64 {
                        self.converged_at.get_or_insert(self.state.iter);
                    }
                }
                self.checkpoint = Some(mask);
            }
        }
        Ok(self.converged_at.is_some())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mode: Option<Mode>,
    pub theta1: f64,
    pub theta2: f64,
    pub init_box: Option<BoxRegion>,
    pub g: Option<FieldStats>,
    pub beta: Option<FieldStats>,
    pub canny_pixels: usize,
    pub bone_edge_pixels: usize,
    pub stopping_pixels: usize,
    pub prompt_strokes: usize,
    pub iterations_run: usize,
    pub converged_at: Option<usize>,
    pub mask_pixels: usize,
    pub mask_pixels_before_postprocess: usize,
    /// Wall-clock per stage; kept out of serialized output so files stay reproducible.
    #[serde(skip)]
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub mask: Mask,
    pub contour: Vec<Polyline>,
    pub iterations_run: usize,
    pub snapshots: Vec<ContourDoc>,
    pub diagnostics: Diagnostics,
    /// Final level set.
    pub phi: ScalarField,
}

/// Runs the whole pipeline.
pub fn run(input: &Input, cfg: &PipelineConfig) -> Result<SegmentationResult> {
    let fields = prepare(input, cfg)?;
    run_prepared(&fields, cfg)
}

/// Runs the evolution and post-processing on already prepared fields.
pub fn run_prepared(fields: &Fields, cfg: &PipelineConfig) -> Result<SegmentationResult> {
    let t = Instant::now();
    let mut runner = Runner::new(fields, cfg)?;
    let mut snapshots = Vec::new();
    while runner.iter() < cfg.evolution.n_iters {
        let done = runner.step()?;
        if let Some(k) = cfg.snapshot_every {
            if runner.iter() % k == 0 {
                snapshots.push(ContourDoc {
                    iteration: runner.iter(),
                    polylines: levelset::extract_contour(&runner.state.phi),
                });
            }
        }
        if done {
            break;
        }
    }
    let mut result = finalize(fields, cfg, runner.state.phi.clone(), runner.iter(), runner.converged_at)?;
    result.snapshots = snapshots;
    result
        .diagnostics
        .timings_ms
        .insert(Stage::Evolution.to_string(), t.elapsed().as_secs_f64() * 1e3);
    Ok(result)
}

/// Extracts mask and contour from `phi` and applies the configured post-processing.
pub fn finalize(
    fields: &Fields,
    cfg: &PipelineConfig,
    phi: ScalarField,
    iterations_run: usize,
    converged_at: Option<usize>,
) -> Result<SegmentationResult> {
    let raw = levelset::extract_mask(&phi);
    let mut timings = fields.timings_ms.clone();
    let mask = timed(&mut timings, Stage::PostProcess, || postprocess(raw.clone(), fields, cfg))?;
    let contour = if mask == raw {
        levelset::extract_contour(&phi)
    } else {
        levelset::extract_contour(&mask.to_field(-0.5, 0.5))
    };
    let diagnostics = Diagnostics {
        mode: Some(fields.mode),
        theta1: cfg.spec.theta1(),
        theta2: cfg.spec.theta2(),
        init_box: Some(fields.init_box),
        g: Some(FieldStats::of(&fields.g)),
        beta: fields.beta.as_ref().map(|b| FieldStats::of(b.field())),
        canny_pixels: fields.all_edges.as_ref().map_or(0, EdgeSet::len),
        bone_edge_pixels: fields.bone_edges.as_ref().map_or(0, EdgeSet::len),
        stopping_pixels: fields.stopping.as_ref().map_or(0, EdgeSet::len),
        prompt_strokes: fields.prompts.strokes.len(),
        iterations_run,
        converged_at,
        mask_pixels: mask.count(),
        mask_pixels_before_postprocess: raw.count(),
        timings_ms: timings,
    };
    Ok(SegmentationResult {
        mask,
        contour,
        iterations_run,
        snapshots: Vec::new(),
        diagnostics,
        phi,
    })
}

/// Applies the post-processing steps enabled in `cfg`.
pub fn postprocess(mask: Mask, fields: &Fields, cfg: &PipelineConfig) -> Result<Mask> {
    let mut mask = mask;
    if cfg.postprocess.inner_holes {
        mask = fill_inner_holes(&mask, fields, cfg)?;
    }
    if cfg.postprocess.narrow_gaps {
        mask = bridge_narrow_gaps(&mask, &fields.image, &cfg.postprocess.gap_seeds, cfg.postprocess.gap_tol)?;
    }
    Ok(mask)
}

/// 4-connected components of `set`, skipping components that touch the frame
/// when `interior_only` is set.
fn components(set: &Mask, interior_only: bool) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = set.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !set.as_slice()[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut touches = false;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            comp.push((r, c));
            touches |= r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            let mut visit = |j: usize| {
                if !seen[j] && set.as_slice()[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if !(interior_only && touches) {
            out.push(comp);
        }
    }
    out
}

/// Pixels of `comp` nearest its centroid.
fn seed_of(comp: &[(usize, usize)]) -> (usize, usize) {
    let n = comp.len() as f64;
    let cr = comp.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cc = comp.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    *comp
        .iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 - cr).hypot(a.1 as f64 - cc);
            let db = (b.0 as f64 - cr).hypot(b.1 as f64 - cc);
            da.total_cmp(&db)
        })
        .expect("components are non-empty")
}

/// Seeds an expanding contour in every enclosed background component of `mask`
/// and fills the component when the expansion escapes it, i.e. when no bone
/// edge separates it from the surrounding mask. Components whose expansion is
/// held at their own border are true holes and stay background.
pub fn fill_inner_holes(mask: &Mask, fields: &Fields, cfg: &PipelineConfig) -> Result<Mask> {
    let (w, h) = mask.dims();
    fields.image.check_same((w, h))?;
    let params = EvolutionParams {
        alpha: cfg.postprocess.hole_alpha,
        n_iters: cfg.postprocess.hole_iters,
        ..cfg.evolution
    };
    let radius = cfg.postprocess.hole_seed_radius;
    let mut out = mask.clone();
    for hole in components(&mask.not(), true) {
        let (sr, sc) = seed_of(&hole);
        let phi0 = ScalarField::from_fn(w, h, |r, c| (r as f64 - sr as f64).hypot(c as f64 - sc as f64) - radius)?;
        let mut hole_mask = Mask::empty(w, h)?;
        for &(r, c) in &hole {
            hole_mask.set(r, c, true);
        }
        let mut state = EvolutionState::new(phi0, fields.g.clone(), fields.beta.clone(), params)?;
        let figac = state.beta.is_some();
        let mut escaped = false;
        for _ in 0..params.n_iters {
            match state.advance(figac) {
                Ok(()) => {}
                // a region that swallowed the whole frame has certainly escaped
                Err(Error::ContourVanished) => {
                    escaped = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !escaped {
            let grown = state.mask();
            let dist = edges::euclidean_distance(&hole_mask)?;
            escaped = grown.points().any(|(r, c)| dist.get(r, c) > 2.0);
        }
        if escaped {
            out = out.or(&hole_mask)?;
        }
    }
    Ok(out)
}

/// Half-width of the region-growing window.
const GAP_WINDOW_RADIUS: usize = 15;

/// Grows 4-connected regions from each seed over pixels within `tol` gray
/// levels of the seed, inside a 31x31 window, and adds them to the mask.
pub fn bridge_narrow_gaps(mask: &Mask, image: &ScalarField, seeds: &[[i64; 2]], tol: f64) -> Result<Mask> {
    let (w, h) = mask.dims();
    image.check_same((w, h))?;
    for (i, &[r, c]) in seeds.iter().enumerate() {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            return Err(Error::SeedOutOfBounds { seed: i, row: r, col: c });
        }
    }
    let mut out = mask.clone();
    for &[sr, sc] in seeds {
        let (sr, sc) = (sr as usize, sc as usize);
        let base = image.get(sr, sc);
        let r_lo = sr.saturating_sub(GAP_WINDOW_RADIUS);
        let c_lo = sc.saturating_sub(GAP_WINDOW_RADIUS);
        let r_hi = (sr + GAP_WINDOW_RADIUS).min(h - 1);
        let c_hi = (sc + GAP_WINDOW_RADIUS).min(w - 1);
        let mut seen = std::collections::HashSet::new();
        let mut queue = VecDeque::from([(sr, sc)]);
        seen.insert((sr, sc));
        while let Some((r, c)) = queue.pop_front() {
            out.set(r, c, true);
            let mut nbrs = Vec::with_capacity(4);
            if r > r_lo {
                nbrs.push((r - 1, c));
            }
            if r < r_hi {
                nbrs.push((r + 1, c));
            }
            if c > c_lo {
                nbrs.push((r, c - 1));
            }
            if c < c_hi {
                nbrs.push((r, c + 1));
            }
            for p in nbrs {
                if (image.get(p.0, p.1) - base).abs() <= tol && seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};

    #[test]
    fn auto_box_examples() {
        let img = ScalarField::from_fn(64, 64, |r, c| if (r, c) == (20, 30) { 200.0 } else { 0.0 }).unwrap();
        assert_eq!(auto_init_box(&img, 115.0, 5).unwrap(), BoxRegion::new(15, 25, 25, 35));

        let img = ScalarField::from_fn(80, 80, |r, c| {
            let d = (r as f64 - 30.0).hypot(c as f64 - 40.0);
            if (15.0..=20.0).contains(&d) { 200.0 } else { 0.0 }
        })
        .unwrap();
        assert_eq!(auto_init_box(&img, 115.0, 4).unwrap(), BoxRegion::new(6, 16, 54, 64));

        let dark = ScalarField::filled(32, 32, 10.0).unwrap();
        assert!(matches!(auto_init_box(&dark, 115.0, 5), Err(Error::NoBoneCandidate { .. })));
    }

    #[test]
    fn auto_box_clamps_to_frame() {
        let img = ScalarField::from_fn(32, 32, |r, c| if r < 3 && c > 28 { 200.0 } else { 0.0 }).unwrap();
        assert_eq!(auto_init_box(&img, 115.0, 5).unwrap(), BoxRegion::new(1, 24, 7, 30));
    }

    #[test]
    fn gap_bridging() {
        let p = make_phantom(&PhantomSpec::new(PhantomKind::TwoDisks)).unwrap();
        let disks = Mask::from_fn(128, 128, |r, c| {
            let d1 = (r as f64 - 64.0).hypot(c as f64 - 42.0);
            let d2 = (r as f64 - 64.0).hypot(c as f64 - 86.0);
            d1 <= 18.0 || d2 <= 18.0
        })
        .unwrap();
        assert_eq!(components(&disks, false).len(), 2);
        let out = bridge_narrow_gaps(&disks, &p.image, &[[64, 64]], 20.0).unwrap();
        assert!(disks.is_subset_of(&out));
        assert_eq!(components(&out, false).len(), 1);

        assert_eq!(bridge_narrow_gaps(&disks, &p.image, &[], 20.0).unwrap(), disks);
        assert!(matches!(
            bridge_narrow_gaps(&disks, &p.image, &[[3, 3], [200, 3]], 20.0),
            Err(Error::SeedOutOfBounds { seed: 1, .. })
        ));
    }

    #[test]
    fn gap_bridging_homogeneous_patch() {
        let img = ScalarField::filled(64, 64, 100.0).unwrap();
        let mask = Mask::from_fn(64, 64, |r, c| (30..34).contains(&r) && (30..34).contains(&c)).unwrap();
        let out = bridge_narrow_gaps(&mask, &img, &[[31, 31]], 5.0).unwrap();
        assert!(mask.is_subset_of(&out));
        assert_eq!(out.count(), 31 * 31);
    }

    #[test]
    fn hole_components_skip_frame() {
        let m = Mask::from_fn(20, 20, |r, c| {
            let d = (r as f64 - 10.0).hypot(c as f64 - 10.0);
            (3.0..=7.0).contains(&d)
        })
        .unwrap();
        let holes = components(&m.not(), true);
        assert_eq!(holes.len(), 1);
        assert_eq!(seed_of(&holes[0]), (10, 10));
    }
}
