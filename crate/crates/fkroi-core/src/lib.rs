//! Deterministic derivation of hand-centric regions of interest from logged
//! robot joint states and a single calibrated external RGB camera.
//!
//! The library covers the full offline path from raw logs to governed
//! artifacts:
//!
//! 1. [`kinematics`] — rigid transforms and forward kinematics over a
//!    serial chain, giving the end-effector pose in the robot base frame.
//! 2. [`camera`] — calibrated base-to-camera transform and pinhole
//!    projection to pixel coordinates with camera-frame depth.
//! 3. [`roi`] — inward-offset crop centers, depth-adaptive crop scale,
//!    boundary-aware extraction with zero padding, and exact area
//!    resampling to a fixed output resolution.
//! 4. [`sync`] — timestamp pairing of image and robot-state streams with
//!    per-pair alignment residuals.
//! 5. [`gates`] — quality-gate statistics and pass/fail reports over
//!    generated record streams.
//! 6. [`manifest`] — canonical record serialization, checksummed dataset
//!    manifests, and regeneration verification.
//! 7. [`foveation`] — sampling-density and token-budget accounting for
//!    ROI-augmented multi-view inputs.
//! 8. [`replay`] — synthetic scenes with analytic ground truth for
//!    validating projection and padding logic end to end.
//! 9. [`pipeline`] — dataset-level orchestration used by the CLI.
//!
//! Every stage is a pure function of its inputs: two runs over identical
//! inputs produce byte-identical records and images.

pub use nalgebra;

pub mod camera;
pub mod foveation;
pub mod gates;
pub mod kinematics;
pub mod manifest;
pub mod pipeline;
pub mod raster;
pub mod replay;
pub mod roi;
pub mod sync;

/// Version string stamped into lineage tuples by this generator.
pub const GENERATOR_VERSION: &str = concat!("fkroi-", env!("CARGO_PKG_VERSION"));

/// Identifier of the only resize policy this generator implements:
/// exact area-weighted resampling with round-half-away-from-zero output
/// quantization.
pub const RESIZE_POLICY: &str = "area-exact-v1";

/// Identifier of the only padding mode this generator implements.
pub const PADDING_MODE: &str = "zero";
