//! Self-supervised depth estimation machinery for dynamic scenes.
//!
//! The crate implements the numerical pieces of a photometric depth-learning
//! pipeline at desk scale: inverse warping with a pinhole model, the
//! SSIM + L1 photometric error with per-pixel minimum reprojection, a
//! quantile-based dynamic-object mask, auto-masking of the plane-sweep cost
//! volume, spectral-entropy uncertainty for mono/multi-frame depth fusion,
//! a synthetic scene generator with ground truth, a direct depth optimizer
//! and the usual depth evaluation metrics.
//!
//! Conventions used everywhere: grids are row-major with the origin at the
//! top-left pixel, `col` (u) grows to the right and `row` (v) grows down.

pub mod costvolume;
pub mod dynmask;
mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod photometric;
pub mod seu;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{BinaryMask, DepthMap, Field, ImageGrid, LossMap};
