use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Window,
    Initialization,
    EdgeDetector,
    DistanceFactor,
    Evolution,
    PostProcess,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Window => "window",
            Stage::Initialization => "initialization",
            Stage::EdgeDetector => "edge-detector",
            Stage::DistanceFactor => "distance-factor",
            Stage::Evolution => "evolution",
            Stage::PostProcess => "post-process",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("no stopping set: the bone edge set is empty")]
    NoStoppingSet,

    #[error("contour vanished: level set has a single sign")]
    ContourVanished,

    #[error("evolution state error: {0}")]
    State(&'static str),

    #[error("no bone-candidate region above gray level {threshold}")]
    NoBoneCandidate { threshold: f64 },

    #[error("prompt stroke {stroke} has coordinate ({row}, {col}) outside the image")]
    PromptOutOfBounds { stroke: usize, row: i64, col: i64 },

    #[error("seed {seed} at ({row}, {col}) is outside the image")]
    SeedOutOfBounds { seed: usize, row: i64, col: i64 },

    #[error("undefined boundary metric: {0} mask is empty")]
    UndefinedBoundaryMetric(&'static str),

    #[error("malformed raster: {0}")]
    Raster(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The stage label, if the error was raised inside the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Configuration key an invalid-input error refers to.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Error::Parameter { field, .. } => Some(field),
            Error::PromptOutOfBounds { .. } => Some("prompts"),
            Error::SeedOutOfBounds { .. } => Some("postprocess.gap_seeds"),
            Error::Stage { source, .. } => source.field(),
            _ => None,
        }
    }

    /// Errors caused by invalid user configuration rather than by the data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Parameter { .. } | Error::PromptOutOfBounds { .. } | Error::SeedOutOfBounds { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
