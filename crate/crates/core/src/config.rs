//! Pipeline configuration as one JSON document, with `key=value` overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::edges::{CannyThresholds, PromptSet};
use crate::error::{Error, Result};
use crate::knowledge::{BoneWindowSpec, EdgeDetectorParams, Presmooth, Window};
use crate::levelset::{BoxRegion, EvolutionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Knowledge-based detector, bone-edge distance factor.
    #[default]
    Figac,
    /// `1 / (1 + |grad I|^2)` on a presmoothed image, no distance factor.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    /// Iterations between compared masks.
    pub window: usize,
    /// Largest changed fraction of mask pixels that counts as a plateau.
    pub tolerance: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            window: 200,
            tolerance: 0.0005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostProcessConfig {
    pub inner_holes: bool,
    pub narrow_gaps: bool,
    pub gap_seeds: Vec<[i64; 2]>,
    /// Gray-level tolerance for region growing.
    pub gap_tol: f64,
    pub hole_alpha: f64,
    pub hole_iters: usize,
    pub hole_seed_radius: f64,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            inner_holes: false,
            narrow_gaps: false,
            gap_seeds: Vec::new(),
            gap_tol: 20.0,
            hole_alpha: -1.0,
            hole_iters: 1000,
            hole_seed_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub window: Window,
    pub spec: BoneWindowSpec,
    pub detector: EdgeDetectorParams,
    pub canny: CannyThresholds,
    pub eta: f64,
    pub kernel_size: usize,
    pub evolution: EvolutionParams,
    pub mode: Mode,
    /// Presmoothing for the classical detector.
    pub classical_presmooth: Option<Presmooth>,
    /// Gray levels are multiplied by this before the classical detector.
    pub classical_scale: f64,
    pub init_box: Option<BoxRegion>,
    /// Threshold for the automatic box; the bone lower bound when unset.
    pub init_threshold: Option<f64>,
    pub init_margin: usize,
    pub prompts: PromptSet,
    pub postprocess: PostProcessConfig,
    /// Record the contour every this many iterations.
    pub snapshot_every: Option<usize>,
    /// Stop early once the mask stops changing.
    pub plateau: Option<PlateauConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: Window::default(),
            spec: BoneWindowSpec::default(),
            detector: EdgeDetectorParams::default(),
            canny: CannyThresholds::default(),
            eta: 70.0,
            kernel_size: 3,
            evolution: EvolutionParams::default(),
            mode: Mode::Figac,
            classical_presmooth: Some(Presmooth::default()),
            classical_scale: 1.0 / 255.0,
            init_box: None,
            init_threshold: None,
            init_margin: 5,
            prompts: PromptSet::default(),
            postprocess: PostProcessConfig::default(),
            snapshot_every: None,
            plateau: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every sub-configuration; image-dependent checks happen in the pipeline.
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.spec.validate()?;
        self.detector.validate(&self.spec)?;
        self.canny.validate()?;
        self.evolution.validate()?;
        if !self.eta.is_finite() {
            return Err(Error::param("eta", "must be finite"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::param("kernel_size", "must be odd"));
        }
        if let Some(p) = self.classical_presmooth {
            if p.size % 2 == 0 || !(p.sigma > 0.0) {
                return Err(Error::param("classical_presmooth", "size must be odd and sigma positive"));
            }
        }
        if !(self.classical_scale > 0.0 && self.classical_scale.is_finite()) {
            return Err(Error::param("classical_scale", "must be positive"));
        }
        if let Some(t) = self.init_threshold {
            if !t.is_finite() {
                return Err(Error::param("init_threshold", "must be finite"));
            }
        }
        let pp = &self.postprocess;
        if !(pp.hole_alpha < 0.0 && pp.hole_alpha.is_finite()) {
            return Err(Error::param("postprocess.hole_alpha", "must be negative"));
        }
        if !(pp.gap_tol >= 0.0 && pp.gap_tol.is_finite()) {
            return Err(Error::param("postprocess.gap_tol", "must be non-negative"));
        }
        if !(pp.hole_seed_radius >= 1.0 && pp.hole_seed_radius.is_finite()) {
            return Err(Error::param("postprocess.hole_seed_radius", "must be at least 1"));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::param("snapshot_every", "must be at least 1"));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 {
                return Err(Error::param("plateau.window", "must be at least 1"));
            }
            if !(p.tolerance >= 0.0 && p.tolerance.is_finite()) {
                return Err(Error::param("plateau.tolerance", "must be non-negative"));
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides, where `key` is a dotted path into the JSON
    /// document and `value` is JSON (bare words are taken as strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let cfg = apply_overrides(self, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies `key=value` overrides to any serializable document.
pub fn apply_overrides<T, S>(value: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    let mut doc = serde_json::to_value(value)?;
    for o in overrides {
        let (path, v) = parse_override(o.as_ref())?;
        set_path(&mut doc, &path, v)?;
    }
    Ok(serde_json::from_value(doc)?)
}

/// Splits `a.b.c=value` into its path segments and parsed value.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::param("set", format!("expected key=value, got {s:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|p| p.is_empty()) {
        return Err(Error::param("set", format!("malformed key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = doc;
    for (i, seg) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        // optional sections start out as null
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::param("set", format!("{} is not an object", path[..i].join("."))))?;
        if last {
            map.insert(seg.clone(), value);
            return Ok(());
        }
        node = map.entry(seg.clone()).or_insert(Value::Null);
    }
    Ok(())
}
