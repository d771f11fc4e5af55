//! Rigid-body transforms and forward kinematics over a serial chain.
//!
//! Rotations are stored as validated 3x3 matrices; there is deliberately no
//! quaternion surface anywhere in the public API. Chains are a flat list of
//! joints, each carrying a fixed parent-to-joint transform plus an optional
//! motion axis, so the pose product stays auditable.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for orthonormality and unit-axis checks.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("rotation is not orthonormal within {ORTHONORMAL_TOL}: max deviation {deviation}")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation determinant {det} is not +1 within {ORTHONORMAL_TOL}")]
    NotProperRotation { det: f64 },
    #[error("homogeneous transform bottom row must be [0,0,0,1], deviation {deviation}")]
    BadHomogeneousRow { deviation: f64 },
    #[error("transform must have 16 row-major entries, got {0}")]
    BadTransformLength(usize),
    #[error("transform contains a non-finite entry")]
    NonFiniteTransform,
    #[error("joint {index} ({kind}) axis norm {norm} is not 1 within {ORTHONORMAL_TOL}")]
    NonUnitAxis {
        index: usize,
        kind: JointKind,
        norm: f64,
    },
    #[error("joint vector has {got} entries, chain has {expected} non-fixed joints")]
    JointCountMismatch { expected: usize, got: usize },
}

/// A rigid transform: orthonormal rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices within [`ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, KinematicsError> {
        let gram = rotation.transpose() * rotation;
        let deviation = (gram - Matrix3::identity()).abs().max();
        if !deviation.is_finite() || deviation > ORTHONORMAL_TOL {
            return Err(KinematicsError::NotOrthonormal { deviation });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(KinematicsError::NotProperRotation { det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFiniteTransform);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Parses a 4x4 row-major homogeneous matrix. The bottom row must be
    /// [0,0,0,1] within [`ORTHONORMAL_TOL`].
    pub fn from_row_major(values: &[f64]) -> Result<Self, KinematicsError> {
        if values.len() != 16 {
            return Err(KinematicsError::BadTransformLength(values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFiniteTransform);
        }
        let deviation = (values[12].abs())
            .max(values[13].abs())
            .max(values[14].abs())
            .max((values[15] - 1.0).abs());
        if deviation > ORTHONORMAL_TOL {
            return Err(KinematicsError::BadHomogeneousRow { deviation });
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    /// Serializes to the 4x4 row-major layout used by all file formats.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Composition a∘b: applying the result equals applying b, then a.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Maps a point through a rigid transform: R·p + t.
pub fn transform_point(pose: &Pose, point: Vector3<f64>) -> Vector3<f64> {
    pose.rotation * point + pose.translation
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

impl std::fmt::Display for JointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JointKind::Revolute => write!(f, "revolute"),
            JointKind::Prismatic => write!(f, "prismatic"),
            JointKind::Fixed => write!(f, "fixed"),
        }
    }
}

/// One link of a serial chain: a fixed parent-to-joint transform followed by
/// the joint's own motion (rotation about or translation along `axis`).
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub fixed_transform: Pose,
}

/// An ordered base-to-tip list of joints. Fixed joints consume no entry of
/// the joint vector; gripper joints are expected to be declared `fixed` so
/// they stay out of the pose product.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    version: String,
    joints: Vec<JointSpec>,
}

impl KinematicChain {
    pub fn new(version: String, joints: Vec<JointSpec>) -> Result<Self, KinematicsError> {
        for (index, joint) in joints.iter().enumerate() {
            if joint.kind != JointKind::Fixed {
                let norm = joint.axis.norm();
                if (norm - 1.0).abs() > ORTHONORMAL_TOL {
                    return Err(KinematicsError::NonUnitAxis {
                        index,
                        kind: joint.kind,
                        norm,
                    });
                }
            }
        }
        Ok(Self { version, joints })
    }

    /// Chain format version, recorded in lineage tuples as the FK version.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    /// Number of non-fixed joints, i.e. the expected joint-vector length.
    pub fn dof(&self) -> usize {
        self.joints
            .iter()
            .filter(|j| j.kind != JointKind::Fixed)
            .count()
    }

    /// Forward kinematics: the base-to-tip product of fixed transforms and
    /// per-joint motion transforms for configuration `q`.
    pub fn fk(&self, q: &[f64]) -> Result<Pose, KinematicsError> {
        let expected = self.dof();
        if q.len() != expected {
            return Err(KinematicsError::JointCountMismatch {
                expected,
                got: q.len(),
            });
        }
        let mut pose = Pose::identity();
        let mut qi = 0;
        for joint in &self.joints {
            pose = compose(&pose, &joint.fixed_transform);
            match joint.kind {
                JointKind::Revolute => {
                    let motion = Pose {
                        rotation: rotation_about_axis(&joint.axis, q[qi]),
                        translation: Vector3::zeros(),
                    };
                    pose = compose(&pose, &motion);
                    qi += 1;
                }
                JointKind::Prismatic => {
                    let motion = Pose {
                        rotation: Matrix3::identity(),
                        translation: joint.axis * q[qi],
                    };
                    pose = compose(&pose, &motion);
                    qi += 1;
                }
                JointKind::Fixed => {}
            }
        }
        Ok(pose)
    }
}

/// Rodrigues rotation about a unit axis.
fn rotation_about_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

// ---------------------------------------------------------------------------
// Chain file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    version: String,
    joints: Vec<JointFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    kind: JointKind,
    axis: [f64; 3],
    transform: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ChainParseError {
    #[error("chain JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("joint {index}: {source}")]
    Joint {
        index: usize,
        source: KinematicsError,
    },
    #[error(transparent)]
    Chain(#[from] KinematicsError),
}

impl KinematicChain {
    pub fn from_json(text: &str) -> Result<Self, ChainParseError> {
        let file: ChainFile = serde_json::from_str(text)?;
        let mut joints = Vec::with_capacity(file.joints.len());
        for (index, j) in file.joints.iter().enumerate() {
            let fixed_transform = Pose::from_row_major(&j.transform)
                .map_err(|source| ChainParseError::Joint { index, source })?;
            joints.push(JointSpec {
                kind: j.kind,
                axis: Vector3::new(j.axis[0], j.axis[1], j.axis[2]),
                fixed_transform,
            });
        }
        Ok(KinematicChain::new(file.version, joints)?)
    }

    pub fn to_json(&self) -> String {
        let file = ChainFile {
            version: self.version.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointFile {
                    kind: j.kind,
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    transform: j.fixed_transform.to_row_major().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("chain serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn translation(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Matrix3::identity(), Vector3::new(x, y, z)).unwrap()
    }

    fn rot_z(angle: f64) -> Matrix3<f64> {
        rotation_about_axis(&Vector3::z(), angle)
    }

    /// Independent oracle: multiply two 4x4 homogeneous matrices entry by
    /// entry, bypassing the Pose composition path entirely.
    fn homogeneous_product(a: &[f64; 16], b: &[f64; 16]) -> [f64; 16] {
        let mut out = [0.0; 16];
        for row in 0..4 {
            for col in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[row * 4 + k] * b[k * 4 + col];
                }
                out[row * 4 + col] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_composes_to_identity() {
        let id = Pose::identity();
        let c = compose(&id, &id);
        assert_eq!(c.to_row_major(), id.to_row_major());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = Pose::new(rot_z(0.7), Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let c = compose(&t, &t.inverse());
        let id = Pose::identity().to_row_major();
        for (got, want) in c.to_row_major().iter().zip(id.iter()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_matches_homogeneous_matrix_oracle() {
        let a = Pose::new(rot_z(0.3), Vector3::new(0.2, 0.1, -0.4)).unwrap();
        let b = Pose::new(
            rotation_about_axis(&Vector3::x(), -1.1),
            Vector3::new(-1.0, 2.0, 3.0),
        )
        .unwrap();
        let want = homogeneous_product(&a.to_row_major(), &b.to_row_major());
        let got = compose(&a, &b).to_row_major();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn transform_point_rotates_by_hand() {
        // 90 degrees about z maps (1,0,0) to (0,1,0).
        let pose = Pose::new(rot_z(FRAC_PI_2), Vector3::zeros()).unwrap();
        let p = transform_point(&pose, Vector3::new(1.0, 0.0, 0.0));
        assert!((p.x - 0.0).abs() < 1e-12);
        assert!((p.y - 1.0).abs() < 1e-12);
        assert!(p.z.abs() < 1e-12);
    }

    #[test]
    fn transform_point_identity_and_translation() {
        let p = Vector3::new(0.3, -0.2, 0.9);
        assert_eq!(transform_point(&Pose::identity(), p), p);
        let t = translation(1.0, 2.0, 3.0);
        assert_eq!(
            transform_point(&t, Vector3::zeros()),
            Vector3::new(1.0, 2.0, 3.0)
        );
    }

    #[test]
    fn fk_zero_dof_is_product_of_fixed_transforms() {
        let chain = KinematicChain::new(
            "test".into(),
            vec![
                JointSpec {
                    kind: JointKind::Fixed,
                    axis: Vector3::zeros(),
                    fixed_transform: translation(1.0, 0.0, 0.0),
                },
                JointSpec {
                    kind: JointKind::Fixed,
                    axis: Vector3::zeros(),
                    fixed_transform: translation(0.0, 2.0, 0.0),
                },
            ],
        )
        .unwrap();
        let pose = chain.fk(&[]).unwrap();
        assert_eq!(pose.translation(), Vector3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn fk_zero_angle_leaves_fixed_transform() {
        let fixed = Pose::new(rot_z(0.4), Vector3::new(0.1, 0.2, 0.3)).unwrap();
        let chain = KinematicChain::new(
            "test".into(),
            vec![JointSpec {
                kind: JointKind::Revolute,
                axis: Vector3::z(),
                fixed_transform: fixed,
            }],
        )
        .unwrap();
        let pose = chain.fk(&[0.0]).unwrap();
        for (g, w) in pose
            .to_row_major()
            .iter()
            .zip(fixed.to_row_major().iter())
        {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn fk_two_link_planar_matches_trig_oracle() {
        // Two revolute joints about z with 1 m links. Planar oracle:
        // x = l1*cos(q1) + l2*cos(q1+q2), y = l1*sin(q1) + l2*sin(q1+q2).
        let chain = KinematicChain::new(
            "planar-2l".into(),
            vec![
                JointSpec {
                    kind: JointKind::Revolute,
                    axis: Vector3::z(),
                    fixed_transform: Pose::identity(),
                },
                JointSpec {
                    kind: JointKind::Revolute,
                    axis: Vector3::z(),
                    fixed_transform: translation(1.0, 0.0, 0.0),
                },
                JointSpec {
                    kind: JointKind::Fixed,
                    axis: Vector3::zeros(),
                    fixed_transform: translation(1.0, 0.0, 0.0),
                },
            ],
        )
        .unwrap();
        let q = [FRAC_PI_2, 0.0];
        let tip = chain.fk(&q).unwrap().translation();
        let (q1, q2) = (q[0], q[1]);
        let want_x = q1.cos() + (q1 + q2).cos();
        let want_y = q1.sin() + (q1 + q2).sin();
        assert!((tip.x - want_x).abs() < 1e-12);
        assert!((tip.y - want_y).abs() < 1e-12);
        assert!(tip.z.abs() < 1e-12);
        // Freeze the hand-evaluated values for q = [pi/2, 0].
        assert!((tip.x - 0.0).abs() < 1e-12);
        assert!((tip.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fk_rejects_wrong_joint_count() {
        let chain = KinematicChain::new(
            "test".into(),
            vec![JointSpec {
                kind: JointKind::Revolute,
                axis: Vector3::z(),
                fixed_transform: Pose::identity(),
            }],
        )
        .unwrap();
        let err = chain.fk(&[0.1, 0.2]).unwrap_err();
        assert!(matches!(
            err,
            KinematicsError::JointCountMismatch {
                expected: 1,
                got: 2
            }
        ));
    }

    #[test]
    fn prismatic_joint_translates_along_axis() {
        let chain = KinematicChain::new(
            "test".into(),
            vec![JointSpec {
                kind: JointKind::Prismatic,
                axis: Vector3::y(),
                fixed_transform: Pose::identity(),
            }],
        )
        .unwrap();
        let pose = chain.fk(&[0.25]).unwrap();
        assert_eq!(pose.translation(), Vector3::new(0.0, 0.25, 0.0));
    }

    #[test]
    fn non_unit_axis_rejected() {
        let err = KinematicChain::new(
            "test".into(),
            vec![JointSpec {
                kind: JointKind::Revolute,
                axis: Vector3::new(0.0, 0.0, 2.0),
                fixed_transform: Pose::identity(),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, KinematicsError::NonUnitAxis { index: 0, .. }));
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0, 0.0, 1.0);
        assert!(Pose::new(bad, Vector3::zeros()).is_err());
    }

    #[test]
    fn reflection_rejected() {
        let mirror = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let err = Pose::new(mirror, Vector3::zeros()).unwrap_err();
        assert!(matches!(err, KinematicsError::NotProperRotation { .. }));
    }

    #[test]
    fn chain_json_round_trip() {
        let chain = KinematicChain::new(
            "fk-v1".into(),
            vec![
                JointSpec {
                    kind: JointKind::Revolute,
                    axis: Vector3::z(),
                    fixed_transform: translation(0.0, 0.0, 0.3),
                },
                JointSpec {
                    kind: JointKind::Fixed,
                    axis: Vector3::zeros(),
                    fixed_transform: translation(0.1, 0.0, 0.0),
                },
            ],
        )
        .unwrap();
        let parsed = KinematicChain::from_json(&chain.to_json()).unwrap();
        assert_eq!(parsed.version(), "fk-v1");
        assert_eq!(parsed.dof(), 1);
        let q = [0.37];
        assert_eq!(
            parsed.fk(&q).unwrap().to_row_major(),
            chain.fk(&q).unwrap().to_row_major()
        );
    }
}
