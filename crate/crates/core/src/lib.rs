//! Fracture-interactive geodesic active contours for bone segmentation in CT
//! slices.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: scalar/boolean fields and finite-difference operators
//! * [`knowledge`]: CT windowing, tissue gray-level bounds, edge detectors
//! * [`edges`]: Canny, bone-edge filtering, prompts, distance factor
//! * [`levelset`]: the level-set solver
//! * [`pipeline`]: the end-to-end segmentation job and post-processing
//! * [`metrics`]: Dice, Jaccard, Hausdorff and ASSD
//! * [`io`]: PNG, raster and JSON interchange formats

pub mod config;
pub mod contour;
pub mod edges;
pub mod error;
pub mod grid;
pub mod io;
pub mod knowledge;
pub mod levelset;
pub mod metrics;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result, Stage};
pub use grid::{CtSlice, Kernel, Mask, ScalarField};
