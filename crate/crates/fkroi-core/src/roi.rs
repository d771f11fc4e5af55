//! Hand-centric ROI derivation: inward-offset crop centers, depth-adaptive
//! crop scale, boundary-aware extraction with zero padding, exact area
//! resampling to a fixed output size, and per-frame confidence.
//!
//! Everything here is a pure function of its inputs. Pixel-grid quantization
//! uses floor(x + 0.5) and 8-bit output quantization rounds half away from
//! zero, so identical inputs produce byte-identical outputs on any platform.
//! Frames whose projection is invalid still produce a record and an all-zero
//! ROI image; nothing is ever dropped or substituted.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{project, to_camera_frame, CalibrationSet, DEFAULT_DEPTH_EPSILON};
use crate::kinematics::{transform_point, Pose};
use crate::raster::RgbRaster;

/// Displacements below this many pixels give no usable inward direction.
pub const INWARD_DIR_MIN_NORM_PX: f64 = 1e-6;

fn default_depth_epsilon() -> f64 {
    DEFAULT_DEPTH_EPSILON
}

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("policy: {0}")]
    BadPolicy(String),
    #[error("policy JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("crop scale requires positive camera-frame depth, got {0}")]
    NonPositiveDepth(f64),
}

/// Static per-embodiment crop policy.
///
/// `aspect_w`/`aspect_h` stretch the depth-adaptive scale into a rectangle
/// matching gripper or tool geometry; `tip_offset_m` is the distance along
/// the end-effector approach axis (+z of the end-effector frame) used to
/// derive the inward offset direction on the image plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPolicy {
    pub policy_version: String,
    /// Offset magnitude in pixels applied along the inward direction.
    pub beta_px: f64,
    /// Meters along the end-effector approach axis defining the tip point.
    pub tip_offset_m: f64,
    /// Dimensionless gain of the depth-adaptive scale law.
    pub alpha: f64,
    /// Nominal physical ROI radius in meters.
    pub nominal_radius_m: f64,
    pub ell_min_px: f64,
    pub ell_max_px: f64,
    pub aspect_w: f64,
    pub aspect_h: f64,
    pub output_size_px: u32,
    /// Sync-residual scale for confidence weighting, seconds.
    pub sync_tau_s: f64,
    /// Near-plane cutoff for projection validity, meters.
    #[serde(default = "default_depth_epsilon")]
    pub depth_epsilon_m: f64,
}

impl RoiPolicy {
    pub fn validate(&self) -> Result<(), RoiError> {
        let bounds_ok = self.ell_min_px > 0.0 && self.ell_min_px <= self.ell_max_px;
        if !bounds_ok {
            return Err(RoiError::BadPolicy(format!(
                "require 0 < ell_min <= ell_max, got [{}, {}]",
                self.ell_min_px, self.ell_max_px
            )));
        }
        let aspect_ok = self.aspect_w > 0.0 && self.aspect_h > 0.0;
        if !aspect_ok {
            return Err(RoiError::BadPolicy(format!(
                "aspect multipliers must be positive, got ({}, {})",
                self.aspect_w, self.aspect_h
            )));
        }
        if self.output_size_px == 0 {
            return Err(RoiError::BadPolicy("output size must be positive".into()));
        }
        let beta_ok = self.beta_px >= 0.0;
        if !beta_ok {
            return Err(RoiError::BadPolicy(format!(
                "beta must be non-negative, got {}",
                self.beta_px
            )));
        }
        let tau_ok = self.sync_tau_s > 0.0;
        if !tau_ok {
            return Err(RoiError::BadPolicy(format!(
                "sync tau must be positive, got {}",
                self.sync_tau_s
            )));
        }
        let epsilon_ok = self.depth_epsilon_m > 0.0;
        if !epsilon_ok {
            return Err(RoiError::BadPolicy(format!(
                "depth epsilon must be positive, got {}",
                self.depth_epsilon_m
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RoiError> {
        let policy: RoiPolicy = serde_json::from_str(text)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serialization cannot fail")
    }
}

/// Integer crop rectangle in raw-image coordinates. May extend outside the
/// image bounds; extraction pads the uncovered part with zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub u0: i64,
    pub v0: i64,
    pub w: u32,
    pub h: u32,
}

/// Per-frame geometric result of the ROI derivation.
///
/// All `Option` fields are `None` exactly when `valid_projection` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGeometry {
    pub valid_projection: bool,
    pub projected_center: Option<(f64, f64)>,
    pub inward_dir: Option<(f64, f64)>,
    pub offset_center: Option<(f64, f64)>,
    pub ell: Option<f64>,
    pub crop_rect: Option<CropRect>,
    pub in_frame_ratio: f64,
    pub padding_ratio: f64,
    pub confidence: f64,
}

/// Fixed-size ROI output image plus the rectangle it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub pixels: RgbRaster,
    pub source_rect: Option<CropRect>,
}

/// Image-plane unit direction from the projected wrist origin toward a tip
/// point `tip_offset_m` along the end-effector approach axis.
///
/// Returns `None` (no offset applied) when either projection is invalid or
/// the pixel displacement is degenerate.
pub fn inward_direction(
    calib: &CalibrationSet,
    ee_pose: &Pose,
    tip_offset_m: f64,
    depth_epsilon: f64,
) -> Option<(f64, f64)> {
    let wrist = transform_point(ee_pose, Vector3::zeros());
    let tip = transform_point(ee_pose, Vector3::new(0.0, 0.0, tip_offset_m));
    let wrist_px = project(
        &calib.intrinsics,
        to_camera_frame(calib, wrist),
        depth_epsilon,
    )
    .pixel?;
    let tip_px = project(&calib.intrinsics, to_camera_frame(calib, tip), depth_epsilon).pixel?;
    let dx = tip_px.0 - wrist_px.0;
    let dy = tip_px.1 - wrist_px.1;
    let norm = (dx * dx + dy * dy).sqrt();
    if norm < INWARD_DIR_MIN_NORM_PX {
        return None;
    }
    Some((dx / norm, dy / norm))
}

/// Shifts the projected center `beta_px` pixels along the inward direction;
/// a missing direction leaves the center unchanged.
pub fn offset_center(center: (f64, f64), inward: Option<(f64, f64)>, beta_px: f64) -> (f64, f64) {
    match inward {
        Some((dx, dy)) => (center.0 + beta_px * dx, center.1 + beta_px * dy),
        None => center,
    }
}

/// Depth-adaptive crop scale: alpha * fx * radius / depth, clipped to
/// [ell_min, ell_max].
pub fn roi_scale(
    fx: f64,
    nominal_radius_m: f64,
    depth_z: f64,
    alpha: f64,
    ell_min: f64,
    ell_max: f64,
) -> Result<f64, RoiError> {
    let depth_ok = depth_z > 0.0;
    if !depth_ok {
        return Err(RoiError::NonPositiveDepth(depth_z));
    }
    let raw = alpha * fx * nominal_radius_m / depth_z;
    Ok(raw.clamp(ell_min, ell_max))
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Integer crop rectangle centered on the offset target.
///
/// Width and height are floor(ell*aspect + 0.5) with a minimum of one pixel;
/// the origin is floor(center - extent/2 + 0.5). The rectangle may extend
/// outside the image on purpose.
pub fn crop_bounds(center: (f64, f64), ell: f64, aspect_w: f64, aspect_h: f64) -> CropRect {
    let w = round_half_up(ell * aspect_w).max(1) as u32;
    let h = round_half_up(ell * aspect_h).max(1) as u32;
    let u0 = round_half_up(center.0 - w as f64 / 2.0);
    let v0 = round_half_up(center.1 - h as f64 / 2.0);
    CropRect { u0, v0, w, h }
}

/// Copies the rectangle out of the raw image, zero-filling anything outside
/// the image bounds, and reports the exact in-frame pixel fraction.
///
/// The returned ratios satisfy `in_frame + padding == 1.0` exactly; a fully
/// out-of-frame rectangle yields an all-zero patch with ratio 0, never an
/// error.
pub fn extract_roi(image: &RgbRaster, rect: &CropRect) -> (RgbRaster, f64, f64) {
    let iw = image.width() as i64;
    let ih = image.height() as i64;
    let mut data = vec![0u8; rect.w as usize * rect.h as usize * 3];
    let mut inside: u64 = 0;
    for row in 0..rect.h as i64 {
        let sy = rect.v0 + row;
        if sy < 0 || sy >= ih {
            continue;
        }
        // Horizontal overlap of this row with the image.
        let x_lo = rect.u0.max(0);
        let x_hi = (rect.u0 + rect.w as i64).min(iw);
        if x_lo >= x_hi {
            continue;
        }
        let count = (x_hi - x_lo) as usize;
        inside += count as u64;
        let src_start = (sy as usize * iw as usize + x_lo as usize) * 3;
        let dst_start = (row as usize * rect.w as usize + (x_lo - rect.u0) as usize) * 3;
        data[dst_start..dst_start + count * 3]
            .copy_from_slice(&image.data()[src_start..src_start + count * 3]);
    }
    let total = rect.w as u64 * rect.h as u64;
    let in_frame_ratio = inside as f64 / total as f64;
    let padding_ratio = 1.0 - in_frame_ratio;
    let patch = RgbRaster::new(rect.w, rect.h, data).expect("patch dims match buffer");
    (patch, in_frame_ratio, padding_ratio)
}

/// Exact area resampling of `patch` to a square `out` x `out` image.
///
/// Each output pixel is the area-weighted mean of the source pixels its
/// back-projected footprint overlaps, accumulated in f64 and quantized by
/// rounding half away from zero. Integer-factor downscales reduce exactly to
/// block means; upscales degenerate to replication weights. Identity size is
/// a byte-identical copy.
pub fn resize_area(patch: &RgbRaster, out: u32) -> RgbRaster {
    if patch.width() == out && patch.height() == out {
        return patch.clone();
    }
    let sw = patch.width() as usize;
    let sh = patch.height() as usize;
    let out_usize = out as usize;
    let mut data = vec![0u8; out_usize * out_usize * 3];
    let src = patch.data();

    for oy in 0..out_usize {
        // Vertical footprint [y0, y1) in source coordinates.
        let y0 = (oy as u64 * sh as u64) as f64 / out as f64;
        let y1 = ((oy as u64 + 1) * sh as u64) as f64 / out as f64;
        let sy_lo = y0.floor() as usize;
        let sy_hi = (y1.ceil() as usize).min(sh);
        for ox in 0..out_usize {
            let x0 = (ox as u64 * sw as u64) as f64 / out as f64;
            let x1 = ((ox as u64 + 1) * sw as u64) as f64 / out as f64;
            let sx_lo = x0.floor() as usize;
            let sx_hi = (x1.ceil() as usize).min(sw);

            let mut acc = [0.0f64; 3];
            let mut weight_sum = 0.0f64;
            for sy in sy_lo..sy_hi {
                let wy = overlap(sy as f64, y0, y1);
                if wy <= 0.0 {
                    continue;
                }
                let row_base = sy * sw;
                for sx in sx_lo..sx_hi {
                    let wx = overlap(sx as f64, x0, x1);
                    if wx <= 0.0 {
                        continue;
                    }
                    let w = wy * wx;
                    let i = (row_base + sx) * 3;
                    acc[0] += src[i] as f64 * w;
                    acc[1] += src[i + 1] as f64 * w;
                    acc[2] += src[i + 2] as f64 * w;
                    weight_sum += w;
                }
            }
            let o = (oy * out_usize + ox) * 3;
            for c in 0..3 {
                let mean = acc[c] / weight_sum;
                data[o + c] = quantize_u8(mean);
            }
        }
    }
    RgbRaster::new(out, out, data).expect("output dims match buffer")
}

/// Length of the overlap between the unit source-pixel interval [s, s+1)
/// and the footprint [lo, hi).
fn overlap(s: f64, lo: f64, hi: f64) -> f64 {
    (hi.min(s + 1.0) - lo.max(s)).max(0.0)
}

/// Round half away from zero, clamped to the 8-bit range. Inputs here are
/// always non-negative.
fn quantize_u8(x: f64) -> u8 {
    let r = (x + 0.5).floor();
    r.clamp(0.0, 255.0) as u8
}

/// Per-frame reliability in [0,1]: zero for invalid projections, otherwise
/// the in-frame fraction weighted by how close the stream alignment is.
pub fn confidence(
    valid_projection: bool,
    in_frame_ratio: f64,
    sync_residual_s: f64,
    sync_tau_s: f64,
) -> f64 {
    debug_assert!(sync_tau_s > 0.0);
    if !valid_projection {
        return 0.0;
    }
    let sync_weight = (1.0 - sync_residual_s.abs() / sync_tau_s).max(0.0);
    in_frame_ratio * sync_weight
}

/// Full per-frame, per-arm derivation from end-effector pose to ROI image.
///
/// An invalid projection still yields a frame: sentinel geometry, an
/// all-zero image of the policy's output size, and confidence 0.
pub fn generate_frame(
    image: &RgbRaster,
    ee_pose_base: &Pose,
    calib: &CalibrationSet,
    policy: &RoiPolicy,
    sync_residual_s: f64,
) -> (RoiGeometry, RoiImage) {
    let ee_origin = transform_point(ee_pose_base, Vector3::zeros());
    let p_cam = to_camera_frame(calib, ee_origin);
    let projection = project(&calib.intrinsics, p_cam, policy.depth_epsilon_m);

    let Some(center) = projection.pixel else {
        let geometry = RoiGeometry {
            valid_projection: false,
            projected_center: None,
            inward_dir: None,
            offset_center: None,
            ell: None,
            crop_rect: None,
            in_frame_ratio: 0.0,
            padding_ratio: 1.0,
            confidence: 0.0,
        };
        let zero = RgbRaster::filled(policy.output_size_px, policy.output_size_px, [0, 0, 0]);
        return (
            geometry,
            RoiImage {
                pixels: zero,
                source_rect: None,
            },
        );
    };

    let inward = inward_direction(calib, ee_pose_base, policy.tip_offset_m, policy.depth_epsilon_m);
    let center_off = offset_center(center, inward, policy.beta_px);
    let ell = roi_scale(
        calib.intrinsics.fx,
        policy.nominal_radius_m,
        projection.depth_z,
        policy.alpha,
        policy.ell_min_px,
        policy.ell_max_px,
    )
    .expect("valid projection implies positive depth");
    let rect = crop_bounds(center_off, ell, policy.aspect_w, policy.aspect_h);
    let (patch, in_frame_ratio, padding_ratio) = extract_roi(image, &rect);
    let pixels = resize_area(&patch, policy.output_size_px);
    let conf = confidence(true, in_frame_ratio, sync_residual_s, policy.sync_tau_s);

    let geometry = RoiGeometry {
        valid_projection: true,
        projected_center: Some(center),
        inward_dir: inward,
        offset_center: Some(center_off),
        ell: Some(ell),
        crop_rect: Some(rect),
        in_frame_ratio,
        padding_ratio,
        confidence: conf,
    };
    (
        geometry,
        RoiImage {
            pixels,
            source_rect: Some(rect),
        },
    )
}
