//! Video demoiréing toolkit.
//!
//! The crate provides the pieces needed to reproduce, at desk scale, the
//! trade-off between temporal consistency and frame-level quality when
//! restoring videos shot off a screen:
//!
//! - [`relation`]: relation-based temporal consistency losses (pixel-level
//!   and multi-scale region-level) with analytic subgradients.
//! - [`flow`]: the competing flow-based consistency loss, frame warping,
//!   occlusion masks, block-matching flow, and Middlebury `.flo` I/O.
//! - [`recon`]: frame-level reconstruction loss with deep supervision and a
//!   fixed random-feature perceptual term, plus the combined training
//!   objective.
//! - [`net`]: a small, manually differentiated multi-frame restoration model
//!   with selective feature aggregation, trained with Adam and a cosine
//!   learning-rate schedule.
//! - [`align`]: the dataset-construction pipeline (flag-frame detection,
//!   triplet sampling, keypoint matching, RANSAC homography, alignment
//!   warps).
//! - [`synth`]: deterministic synthetic clip generation (moiré gratings,
//!   flicker, brightness ramps) for training and evaluation.
//! - [`metrics`]: PSNR, SSIM, and the flow-warping error.
//! - [`tensor`]: image/video containers, resampling, and PNG I/O shared by
//!   everything above.
//!
//! All numeric kernels operate on `f64` and are deterministic: identical
//! inputs and seeds produce bit-identical results regardless of whether the
//! `parallel` feature (rayon data-parallel loops, enabled by default) is
//! active. Per-element work is parallelized; reductions always run in a
//! fixed order.

pub mod align;
mod conv;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod net;
mod parallel;
pub mod recon;
pub mod relation;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
