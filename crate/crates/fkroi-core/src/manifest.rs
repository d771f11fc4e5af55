//! Per-frame metadata records, lineage tuples, checksummed dataset
//! manifests, and regeneration verification.
//!
//! Records are serialized as JSON Lines with a fixed key order (struct
//! declaration order below) and shortest round-trip float rendering, so the
//! byte stream — and therefore every checksum — is identical across runs and
//! platforms for identical records. The empty record stream hashes to the
//! SHA-256 empty digest by construction.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::roi::CropRect;
use crate::{PADDING_MODE, RESIZE_POLICY};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("records are not ordered by (timestamp, arm_id) at index {index}")]
    UnorderedRecords { index: usize },
    #[error("record {index} carries lineage {got:?}, manifest expects {expected:?}")]
    LineageMismatch {
        index: usize,
        expected: Box<LineageTuple>,
        got: Box<LineageTuple>,
    },
    #[error("lineage field {field} must not be empty")]
    EmptyLineageField { field: &'static str },
    #[error("lineage padding_mode must be \"{PADDING_MODE}\", got {got:?}")]
    BadPaddingMode { got: String },
    #[error("record line {line} is malformed: {source}")]
    BadRecordLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing artifact {path}: {source}")]
    MissingArtifact {
        path: String,
        source: std::io::Error,
    },
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest JSON is malformed: {0}")]
    Json(#[from] serde_json::Error),
}

/// The version fields that make ROI regeneration deterministic and
/// auditable. `padding_mode` is always the literal `"zero"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageTuple {
    pub intrinsics_ver: String,
    pub extrinsics_ver: String,
    pub fk_ver: String,
    pub roi_generator_ver: String,
    pub crop_offset_ver: String,
    pub resize_policy: String,
    pub padding_mode: String,
}

impl LineageTuple {
    pub fn new(
        intrinsics_ver: String,
        extrinsics_ver: String,
        fk_ver: String,
        crop_offset_ver: String,
    ) -> Self {
        Self {
            intrinsics_ver,
            extrinsics_ver,
            fk_ver,
            roi_generator_ver: crate::GENERATOR_VERSION.to_string(),
            crop_offset_ver,
            resize_policy: RESIZE_POLICY.to_string(),
            padding_mode: PADDING_MODE.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let fields: [(&'static str, &str); 7] = [
            ("intrinsics_ver", &self.intrinsics_ver),
            ("extrinsics_ver", &self.extrinsics_ver),
            ("fk_ver", &self.fk_ver),
            ("roi_generator_ver", &self.roi_generator_ver),
            ("crop_offset_ver", &self.crop_offset_ver),
            ("resize_policy", &self.resize_policy),
            ("padding_mode", &self.padding_mode),
        ];
        for (field, value) in fields {
            if value.is_empty() {
                return Err(ManifestError::EmptyLineageField { field });
            }
        }
        if self.padding_mode != PADDING_MODE {
            return Err(ManifestError::BadPaddingMode {
                got: self.padding_mode.clone(),
            });
        }
        Ok(())
    }
}

/// Teleop control-state metrics attached per frame when the source log
/// carries operator-loop fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopMetrics {
    /// End-to-end latency between command issue and state timestamp, seconds.
    pub latency_s: Option<f64>,
    /// Effective control frequency from the median inter-state gap, Hz.
    pub control_hz: Option<f64>,
    /// Translation distance between mapped operator pose and commanded pose,
    /// meters.
    pub mapping_residual_m: Option<f64>,
}

/// The per-frame data contract. Key order in the canonical JSONL stream is
/// exactly the declaration order of these fields.
///
/// Geometry fields are `null` exactly when `valid_projection` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub frame_index: u64,
    pub timestamp: f64,
    pub camera_id: String,
    pub robot_id: String,
    pub arm_id: String,
    pub valid_projection: bool,
    pub projected_center: Option<[f64; 2]>,
    pub offset_center: Option<[f64; 2]>,
    pub crop_rect: Option<CropRect>,
    pub ell: Option<f64>,
    pub in_frame_ratio: f64,
    pub padding_ratio: f64,
    pub confidence: f64,
    /// End-effector pose in the base frame, 4x4 row-major.
    pub ee_pose_base: Vec<f64>,
    /// End-effector origin in the camera frame, meters.
    pub ee_point_camera: [f64; 3],
    pub sync_residual: f64,
    pub teleop: Option<TeleopMetrics>,
    /// Open flag set; see the documented starter vocabulary.
    pub quality_flags: Vec<String>,
    pub lineage: LineageTuple,
}

impl RoiRecord {
    /// Sentinel geometry must appear exactly when the projection is invalid.
    pub fn sentinel_consistent(&self) -> bool {
        let has_geometry = self.projected_center.is_some()
            && self.offset_center.is_some()
            && self.crop_rect.is_some()
            && self.ell.is_some();
        let all_sentinel = self.projected_center.is_none()
            && self.offset_center.is_none()
            && self.crop_rect.is_none()
            && self.ell.is_none();
        if self.valid_projection {
            has_geometry
        } else {
            all_sentinel
        }
    }

    /// Output image filename for this record.
    pub fn image_file_name(&self) -> String {
        format!("{:08}_{}.png", self.frame_index, self.arm_id)
    }
}

/// Starter vocabulary for `quality_flags`; the set is open by design.
pub mod quality_flags {
    /// |sync residual| exceeded the pairing tolerance.
    pub const SYNC_FLAGGED: &str = "sync-flagged";
    /// Half or more of the crop fell outside the raw frame.
    pub const BOUNDARY_HEAVY: &str = "boundary-heavy";
    /// Reserved for external occlusion annotation; never set automatically.
    pub const OCCLUDED_SUSPECT: &str = "occluded-suspect";
}

/// Canonical byte serialization: one record per line, fixed key order,
/// shortest round-trip floats.
pub fn records_to_canonical_bytes(records: &[RoiRecord]) -> Result<Vec<u8>, ManifestError> {
    for (index, win) in records.windows(2).enumerate() {
        let a = (&win[0].timestamp, &win[0].arm_id);
        let b = (&win[1].timestamp, &win[1].arm_id);
        if b < a {
            return Err(ManifestError::UnorderedRecords { index: index + 1 });
        }
    }
    let mut bytes = Vec::new();
    for record in records {
        bytes.extend_from_slice(
            serde_json::to_string(record)
                .expect("record serialization cannot fail")
                .as_bytes(),
        );
        bytes.push(b'\n');
    }
    Ok(bytes)
}

pub fn parse_records(text: &str) -> Result<Vec<RoiRecord>, ManifestError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let record: RoiRecord = serde_json::from_str(raw).map_err(|source| {
            ManifestError::BadRecordLine {
                line: i + 1,
                source,
            }
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(digest: &[u8]) -> String {
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Streams a file through SHA-256.
pub fn hash_file(path: &Path) -> Result<String, ManifestError> {
    let mut file = fs::File::open(path).map_err(|source| ManifestError::MissingArtifact {
        path: path.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

/// Writes the canonical record stream to `destination` and returns the
/// SHA-256 of the written bytes.
pub fn write_records(records: &[RoiRecord], destination: &Path) -> Result<String, ManifestError> {
    let bytes = records_to_canonical_bytes(records)?;
    fs::write(destination, &bytes).map_err(|source| ManifestError::Io {
        path: destination.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// A checksummed reference to one file, relative to the dataset root for
/// derived artifacts and as-given for inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

/// Checksummed references to the five pipeline inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRefs {
    pub state_log: ArtifactRef,
    pub image_index: ArtifactRef,
    pub calibration: ArtifactRef,
    pub chain: ArtifactRef,
    pub policy: ArtifactRef,
}

/// Parameters the dataset was generated with, echoed for regeneration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreationParams {
    pub camera_id: String,
    pub sync_tolerance_s: f64,
    pub arms: Vec<String>,
}

/// Checksummed, versioned description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub tool_version: String,
    pub lineage: LineageTuple,
    pub records: ArtifactRef,
    /// Per-image checksums, sorted by path.
    pub roi_images: Vec<ArtifactRef>,
    /// Rolled-up digest over the sorted (path, sha256) list.
    pub roi_images_digest: String,
    pub inputs: InputRefs,
    pub creation_params: CreationParams,
    /// Opaque sharing policy label; not interpreted by this tool.
    pub access_policy: String,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROI_DIR: &str = "roi";

fn rollup_digest(images: &[ArtifactRef]) -> String {
    let mut hasher = Sha256::new();
    for img in images {
        hasher.update(img.path.as_bytes());
        hasher.update(b"\0");
        hasher.update(img.sha256.as_bytes());
        hasher.update(b"\n");
    }
    hex_string(&hasher.finalize())
}

/// Builds the manifest for a dataset root holding `records.jsonl` and its
/// ROI images. Every referenced artifact is hashed; a missing one is an
/// error naming it. The dataset id is derived from content, so identical
/// inputs give byte-identical manifests.
pub fn build_manifest(
    root: &Path,
    inputs: InputRefs,
    lineage: LineageTuple,
    creation_params: CreationParams,
    access_policy: String,
) -> Result<DatasetManifest, ManifestError> {
    lineage.validate()?;
    let records_path = root.join(RECORDS_FILE);
    let records_sha = hash_file(&records_path)?;
    let text = fs::read_to_string(&records_path).map_err(|source| ManifestError::Io {
        path: records_path.display().to_string(),
        source,
    })?;
    let records = parse_records(&text)?;

    let mut image_names = BTreeSet::new();
    for (index, record) in records.iter().enumerate() {
        if record.lineage != lineage {
            return Err(ManifestError::LineageMismatch {
                index,
                expected: Box::new(lineage.clone()),
                got: Box::new(record.lineage.clone()),
            });
        }
        image_names.insert(record.image_file_name());
    }

    let mut roi_images = Vec::with_capacity(image_names.len());
    for name in image_names {
        let rel = format!("{ROI_DIR}/{name}");
        let sha256 = hash_file(&root.join(ROI_DIR).join(&name))?;
        roi_images.push(ArtifactRef { path: rel, sha256 });
    }
    let roi_images_digest = rollup_digest(&roi_images);

    let mut id_hasher = Sha256::new();
    id_hasher.update(records_sha.as_bytes());
    id_hasher.update(roi_images_digest.as_bytes());
    id_hasher.update(serde_json::to_string(&lineage)?.as_bytes());
    let dataset_id = format!("ds-{}", &hex_string(&id_hasher.finalize())[..16]);

    Ok(DatasetManifest {
        dataset_id,
        tool_version: crate::GENERATOR_VERSION.to_string(),
        lineage,
        records: ArtifactRef {
            path: RECORDS_FILE.to_string(),
            sha256: records_sha,
        },
        roi_images,
        roi_images_digest,
        inputs,
        creation_params,
        access_policy,
    })
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, root: &Path) -> Result<(), ManifestError> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, self.to_json()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(root: &Path) -> Result<Self, ManifestError> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ManifestError::MissingArtifact {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Outcome of checking one artifact against its recorded checksum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactCheck {
    pub path: String,
    pub expected_sha256: String,
    pub actual_sha256: Option<String>,
    pub ok: bool,
    pub note: Option<String>,
}

/// Result of [`verify_regeneration`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `None` when the checked root carries no manifest of its own.
    pub lineage_match: Option<bool>,
    pub artifacts: Vec<ArtifactCheck>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &ArtifactCheck> {
        self.artifacts.iter().filter(|a| !a.ok)
    }
}

/// Recomputes every derived-artifact checksum under `regenerated_root` and
/// compares against the manifest. If the root carries its own manifest, the
/// lineage tuples are compared first. Unreadable artifacts are reported as
/// mismatches with the reason; verification always continues to the end.
pub fn verify_regeneration(manifest: &DatasetManifest, regenerated_root: &Path) -> VerificationReport {
    let lineage_match = match DatasetManifest::load(regenerated_root) {
        Ok(other) => Some(other.lineage == manifest.lineage),
        Err(_) => None,
    };

    let mut artifacts = Vec::with_capacity(manifest.roi_images.len() + 1);
    let mut check = |reference: &ArtifactRef| {
        let full = regenerated_root.join(&reference.path);
        match hash_file(&full) {
            Ok(actual) => {
                let ok = actual == reference.sha256;
                artifacts.push(ArtifactCheck {
                    path: reference.path.clone(),
                    expected_sha256: reference.sha256.clone(),
                    actual_sha256: Some(actual),
                    ok,
                    note: if ok {
                        None
                    } else {
                        Some("checksum mismatch".to_string())
                    },
                });
            }
            Err(err) => {
                artifacts.push(ArtifactCheck {
                    path: reference.path.clone(),
                    expected_sha256: reference.sha256.clone(),
                    actual_sha256: None,
                    ok: false,
                    note: Some(err.to_string()),
                });
            }
        }
    };

    check(&manifest.records);
    for image in &manifest.roi_images {
        check(image);
    }

    let pass = lineage_match != Some(false) && artifacts.iter().all(|a| a.ok);
    VerificationReport {
        lineage_match,
        artifacts,
        pass,
    }
}
