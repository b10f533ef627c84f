//! Pseudo-modality matching data engine and two-view evaluation harness.
//!
//! The crate turns RGB image pairs with depth/pose or homography labels into
//! cross-modal matching data (simulated events, external generators), cleans
//! and splits the result, and scores any matcher's correspondences with
//! pose-AUC and homography-AUC protocols.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod engine;
pub mod estimators;
pub mod eventsim;
pub mod geometry;
pub mod matcher;
pub mod metrics;
pub mod raster;
pub mod seeding;
pub mod synth;

pub use estimators::{EstimateResult, EstimatorError, RansacConfig, RelativePose};
pub use geometry::{CameraModel, DepthMap, GeometryError, Homography, Match, MatchSet, Pixel, Pose};
pub use raster::Raster;
