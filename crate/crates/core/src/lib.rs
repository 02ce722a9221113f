//! Desk-scale pipeline for regularizing pseudo-label self-training with
//! multimodal objectness constraints.
//!
//! The crate is organized around the stages of the method:
//!
//! - [`raster`] / [`io`]: domain rasters and bit-exact PNG formats;
//! - [`synth`]: a synthetic RGB-D scene generator with a controllable
//!   source-to-target photometric shift;
//! - [`slic`]: SLIC superpixels over CIELAB ([`color`]);
//! - [`depth`]: depth-histogram peak clustering;
//! - [`fusion`]: object-region estimation by intersecting the two
//!   segmentations, plus pseudo-label-driven region labeling;
//! - [`loss`]: region prototypes and the contrastive objectness loss with
//!   exact analytic gradients;
//! - [`model`] / [`train`]: a toy differentiable segmentation model and the
//!   self-training loop combining source cross-entropy, pseudo-label
//!   self-training and the objectness regularizer;
//! - [`metrics`]: per-class IoU evaluation.

pub mod color;
pub mod depth;
pub mod error;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod slic;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::{
    downsample_segments, DepthMap, LabelMap, PseudoLabelMap, RgbImage, SceneSample, SegmentMap,
    IGNORE_LABEL, NO_PSEUDO_LABEL,
};
