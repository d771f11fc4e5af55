//! Pinhole camera model and the calibrated base-to-camera transform.
//!
//! Projection validity means exactly "in front of the camera and finite":
//! pixels outside the sensor bounds are still valid projections, since the
//! ROI layer handles out-of-frame geometry through padding. Points at or
//! behind the near-plane epsilon are never projected.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{transform_point, KinematicsError, Pose};

/// Default near-plane cutoff in meters below which projections are invalid.
pub const DEFAULT_DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("extrinsics: {0}")]
    BadExtrinsics(#[from] KinematicsError),
}

/// Pinhole intrinsics in pixel units, without distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub version: String,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CalibrationError::BadIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CalibrationError::BadIntrinsics(format!(
                "resolution must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        let in_x = self.cx >= 0.0 && self.cx < self.width as f64;
        let in_y = self.cy >= 0.0 && self.cy < self.height as f64;
        if !(in_x && in_y) {
            return Err(CalibrationError::BadIntrinsics(format!(
                "principal point ({}, {}) outside [0,{})x[0,{})",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Versioned intrinsics plus the base-to-camera rigid transform.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub intrinsics: Intrinsics,
    pub extrinsics_cam_from_base: Pose,
    pub extrinsics_version: String,
}

impl CalibrationSet {
    pub fn new(
        intrinsics: Intrinsics,
        extrinsics_cam_from_base: Pose,
        extrinsics_version: String,
    ) -> Result<Self, CalibrationError> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            extrinsics_cam_from_base,
            extrinsics_version,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let file: CalibrationFile = serde_json::from_str(text)?;
        let pose = Pose::from_row_major(&file.extrinsics.cam_from_base)?;
        CalibrationSet::new(file.intrinsics, pose, file.extrinsics.version)
    }

    pub fn to_json(&self) -> String {
        let file = CalibrationFile {
            intrinsics: self.intrinsics.clone(),
            // Reserved for forward compatibility; this tool is pure pinhole.
            distortion: None,
            extrinsics: ExtrinsicsFile {
                cam_from_base: self.extrinsics_cam_from_base.to_row_major().to_vec(),
                version: self.extrinsics_version.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("calibration serialization cannot fail")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    intrinsics: Intrinsics,
    distortion: Option<serde_json::Value>,
    extrinsics: ExtrinsicsFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtrinsicsFile {
    cam_from_base: Vec<f64>,
    version: String,
}

/// Result of projecting one camera-frame point.
///
/// `pixel` is `None` whenever the point is at or behind the near plane or
/// the pixel coordinates come out non-finite; the camera-frame depth is
/// recorded either way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Option<(f64, f64)>,
    pub depth_z: f64,
}

impl Projection {
    pub fn is_valid(&self) -> bool {
        self.pixel.is_some()
    }
}

/// Maps a base-frame point into the camera frame.
pub fn to_camera_frame(calib: &CalibrationSet, p_base: Vector3<f64>) -> Vector3<f64> {
    transform_point(&calib.extrinsics_cam_from_base, p_base)
}

/// Pinhole projection of a camera-frame point to pixel coordinates.
pub fn project(intr: &Intrinsics, p_cam: Vector3<f64>, depth_epsilon: f64) -> Projection {
    let z = p_cam.z;
    // NaN depth must land on the invalid path, so test the positive form.
    let in_front = z > depth_epsilon;
    if !in_front {
        return Projection {
            pixel: None,
            depth_z: z,
        };
    }
    let u = intr.fx * p_cam.x / z + intr.cx;
    let v = intr.fy * p_cam.y / z + intr.cy;
    if !(u.is_finite() && v.is_finite()) {
        return Projection {
            pixel: None,
            depth_z: z,
        };
    }
    Projection {
        pixel: Some((u, v)),
        depth_z: z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280,
            height: 720,
            version: "intr-test".into(),
        }
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let proj = project(
            &test_intrinsics(),
            Vector3::new(0.0, 0.0, 1.0),
            DEFAULT_DEPTH_EPSILON,
        );
        assert_eq!(proj.pixel, Some((640.0, 360.0)));
        assert_eq!(proj.depth_z, 1.0);
    }

    #[test]
    fn off_axis_point_matches_direct_evaluation() {
        // u = fx*x/z + cx = 1000*0.1/1 + 640 = 740.
        let proj = project(
            &test_intrinsics(),
            Vector3::new(0.1, 0.0, 1.0),
            DEFAULT_DEPTH_EPSILON,
        );
        assert_eq!(proj.pixel, Some((740.0, 360.0)));
    }

    #[test]
    fn behind_camera_is_invalid() {
        let proj = project(
            &test_intrinsics(),
            Vector3::new(0.0, 0.0, -1.0),
            DEFAULT_DEPTH_EPSILON,
        );
        assert!(!proj.is_valid());
        assert_eq!(proj.depth_z, -1.0);
    }

    #[test]
    fn near_plane_is_exclusive_and_ignores_xy() {
        let intr = test_intrinsics();
        let eps = 1e-3;
        assert!(!project(&intr, Vector3::new(0.0, 0.0, 1e-3), eps).is_valid());
        assert!(project(&intr, Vector3::new(0.0, 0.0, 1.001e-3), eps).is_valid());
        // Non-finite x/y with bad depth must still be invalid, not NaN.
        let p = project(&intr, Vector3::new(f64::NAN, f64::INFINITY, 0.0), eps);
        assert!(!p.is_valid());
    }

    #[test]
    fn non_finite_ray_is_invalid_even_in_front() {
        let p = project(
            &test_intrinsics(),
            Vector3::new(f64::NAN, 0.0, 1.0),
            DEFAULT_DEPTH_EPSILON,
        );
        assert!(!p.is_valid());
        assert_eq!(p.depth_z, 1.0);
    }

    #[test]
    fn identity_extrinsics_passes_point_through() {
        let calib = CalibrationSet::new(test_intrinsics(), Pose::identity(), "ext-test".into())
            .unwrap();
        let p = Vector3::new(0.3, -0.1, 2.0);
        assert_eq!(to_camera_frame(&calib, p), p);
    }

    #[test]
    fn translation_only_extrinsics() {
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let calib = CalibrationSet::new(test_intrinsics(), pose, "ext-test".into()).unwrap();
        assert_eq!(
            to_camera_frame(&calib, Vector3::zeros()),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn rotated_camera_matches_homogeneous_oracle() {
        // Camera rotated 180 degrees about y, centered at (0,0,2) in base
        // coordinates: R = diag(-1,1,-1), t = -R*(0,0,2) = (0,0,2).
        // Hand-evaluated homogeneous multiply sends the base origin to (0,0,2).
        let rot = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let pose = Pose::new(rot, Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let calib = CalibrationSet::new(test_intrinsics(), pose, "ext-test".into()).unwrap();
        let p = to_camera_frame(&calib, Vector3::zeros());
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        // A point 0.5 m along base +x lands at camera-frame (-0.5, 0, 2).
        let q = to_camera_frame(&calib, Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(q, Vector3::new(-0.5, 0.0, 2.0));
    }

    #[test]
    fn intrinsics_validation_rejects_bad_fields() {
        let mut intr = test_intrinsics();
        intr.fx = 0.0;
        assert!(intr.validate().is_err());
        let mut intr = test_intrinsics();
        intr.cx = 1280.0;
        assert!(intr.validate().is_err());
        let mut intr = test_intrinsics();
        intr.cy = -1.0;
        assert!(intr.validate().is_err());
    }

    #[test]
    fn calibration_json_round_trip() {
        let rot = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let pose = Pose::new(rot, Vector3::new(0.0, 0.0, 2.0)).unwrap();
        let calib = CalibrationSet::new(test_intrinsics(), pose, "ext-v3".into()).unwrap();
        let parsed = CalibrationSet::from_json(&calib.to_json()).unwrap();
        assert_eq!(parsed.intrinsics, calib.intrinsics);
        assert_eq!(parsed.extrinsics_version, "ext-v3");
        assert_eq!(
            parsed.extrinsics_cam_from_base.to_row_major(),
            calib.extrinsics_cam_from_base.to_row_major()
        );
    }
}
