//! Dataset-level orchestration: pairing, per-frame generation across arms,
//! and output collection in canonical order.
//!
//! Per-frame work is pure and runs in parallel; results are collected in
//! deterministic (timestamp, arm, frame) order, so thread count never
//! changes the output bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::CalibrationSet;
use crate::gates::teleop_metrics;
use crate::kinematics::{KinematicChain, KinematicsError};
use crate::manifest::{quality_flags, LineageTuple, RoiRecord};
use crate::raster::{RasterError, RgbRaster};
use crate::roi::{generate_frame, RoiImage, RoiPolicy};
use crate::sync::{pair_streams, FrameSample, PairingSummary, StateRecord, SyncError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("arm {0:?} is not present in the state log")]
    ArmNotInLog(String),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("frame {frame_index} ({arm_id}): {source}")]
    FrameKinematics {
        frame_index: u64,
        arm_id: String,
        source: KinematicsError,
    },
    #[error("frame {frame_index} ({arm_id}): {source}")]
    FrameImage {
        frame_index: u64,
        arm_id: String,
        source: RasterError,
    },
}

/// Parsed pipeline inputs.
pub struct PipelineInputs {
    pub chain: KinematicChain,
    pub calib: CalibrationSet,
    pub policy: RoiPolicy,
    pub states: Vec<StateRecord>,
    /// Image index entries: (timestamp, path relative to the image root).
    pub images: Vec<(f64, String)>,
}

/// Generation parameters beyond the input files.
#[derive(Debug, Clone)]
pub struct GenerateParams {
    pub camera_id: String,
    pub sync_tolerance_s: f64,
    /// Arms to process; `None` means every arm present in the state log.
    pub arms: Option<Vec<String>>,
    /// Trailing window (in inter-state gaps) for the control-frequency
    /// metric.
    pub teleop_window: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            camera_id: "cam0".to_string(),
            sync_tolerance_s: crate::sync::DEFAULT_SYNC_TOLERANCE_S,
            arms: None,
            teleop_window: 50,
        }
    }
}

/// Where raw frames come from.
pub enum ImageSource<'a> {
    /// Image-index paths are resolved against this directory.
    Directory(&'a Path),
    /// In-memory rasters keyed by image-index path (used by the replay
    /// harness and tests).
    Memory(&'a BTreeMap<String, RgbRaster>),
}

impl ImageSource<'_> {
    fn load(&self, rel_path: &str) -> Result<RgbRaster, RasterError> {
        match self {
            ImageSource::Directory(dir) => RgbRaster::load_png(&dir.join(rel_path)),
            ImageSource::Memory(map) => {
                map.get(rel_path)
                    .cloned()
                    .ok_or_else(|| RasterError::Read {
                        path: rel_path.to_string(),
                        source: Box::new(image::ImageError::IoError(std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "not in memory image set",
                        ))),
                    })
            }
        }
    }
}

/// Everything `generate` produces, in canonical order.
#[derive(Debug)]
pub struct GenerateResult {
    pub records: Vec<RoiRecord>,
    /// ROI images aligned 1:1 with `records`; `.0` is the file name under
    /// the dataset's roi/ directory.
    pub images: Vec<(String, RoiImage)>,
    pub samples: Vec<FrameSample>,
    pub pairing: PairingSummary,
    pub lineage: LineageTuple,
}

/// Arms present in a state log, sorted and deduplicated.
pub fn arms_in_log(states: &[StateRecord]) -> Vec<String> {
    let mut arms: Vec<String> = states.iter().map(|s| s.arm_id.clone()).collect();
    arms.sort();
    arms.dedup();
    arms
}

fn lineage_for(inputs: &PipelineInputs) -> LineageTuple {
    LineageTuple::new(
        inputs.calib.intrinsics.version.clone(),
        inputs.calib.extrinsics_version.clone(),
        inputs.chain.version().to_string(),
        inputs.policy.policy_version.clone(),
    )
}

/// One pairing task: the frame sample plus any teleop metrics attached to
/// its state.
pub type PairedTask = (FrameSample, Option<crate::manifest::TeleopMetrics>);

/// Per-arm pairing over the shared image stream, with teleop metrics joined
/// where the source log carries them. Returns tasks in canonical
/// (timestamp, arm, frame) order plus merged pairing accounting.
pub fn pair_all_arms(
    inputs: &PipelineInputs,
    params: &GenerateParams,
) -> Result<(Vec<PairedTask>, PairingSummary), PipelineError> {
    let arms = match &params.arms {
        Some(list) => {
            let present = arms_in_log(&inputs.states);
            for arm in list {
                if !present.contains(arm) {
                    return Err(PipelineError::ArmNotInLog(arm.clone()));
                }
            }
            list.clone()
        }
        None => arms_in_log(&inputs.states),
    };

    let mut tasks: Vec<PairedTask> = Vec::new();
    let mut pairing = PairingSummary::default();
    for arm in &arms {
        let arm_states: Vec<StateRecord> = inputs
            .states
            .iter()
            .filter(|s| &s.arm_id == arm)
            .cloned()
            .collect();
        let (samples, summary) =
            pair_streams(&inputs.images, &arm_states, params.sync_tolerance_s)?;
        pairing.matched += summary.matched;
        pairing.unmatched_images += summary.unmatched_images;
        pairing.unused_states += summary.unused_states;
        pairing.out_of_tolerance += summary.out_of_tolerance;

        let has_teleop = arm_states.iter().any(|s| s.teleop.is_some());
        let metrics = has_teleop.then(|| teleop_metrics(&arm_states, params.teleop_window));
        for sample in samples {
            let teleop = metrics.as_ref().map(|m| {
                let idx = arm_states.partition_point(|s| s.t < sample.state.t);
                m[idx].clone()
            });
            tasks.push((sample, teleop));
        }
    }

    // Deterministic output order regardless of worker scheduling.
    tasks.sort_by(|(a, _), (b, _)| {
        a.image_t
            .total_cmp(&b.image_t)
            .then_with(|| a.state.arm_id.cmp(&b.state.arm_id))
            .then_with(|| a.frame_index.cmp(&b.frame_index))
    });
    Ok((tasks, pairing))
}

/// Runs pairing and per-frame ROI generation for the selected arms.
///
/// Every paired frame is emitted, including invalid-projection ones. Records
/// and images come back sorted by (timestamp, arm, frame index).
pub fn generate_dataset(
    inputs: &PipelineInputs,
    params: &GenerateParams,
    source: &ImageSource<'_>,
) -> Result<GenerateResult, PipelineError> {
    let (tasks, pairing) = pair_all_arms(inputs, params)?;

    let lineage = lineage_for(inputs);
    let outputs: Vec<Result<(RoiRecord, RoiImage), PipelineError>> = tasks
        .par_iter()
        .map(|(sample, teleop)| {
            process_frame(sample, teleop.clone(), inputs, params, source, &lineage)
        })
        .collect();

    let mut records = Vec::with_capacity(outputs.len());
    let mut images = Vec::with_capacity(outputs.len());
    let mut samples = Vec::with_capacity(tasks.len());
    for (output, (sample, _)) in outputs.into_iter().zip(tasks) {
        let (record, image) = output?;
        images.push((record.image_file_name(), image));
        records.push(record);
        samples.push(sample);
    }

    Ok(GenerateResult {
        records,
        images,
        samples,
        pairing,
        lineage,
    })
}

fn process_frame(
    sample: &FrameSample,
    teleop: Option<crate::manifest::TeleopMetrics>,
    inputs: &PipelineInputs,
    params: &GenerateParams,
    source: &ImageSource<'_>,
    lineage: &LineageTuple,
) -> Result<(RoiRecord, RoiImage), PipelineError> {
    let arm_id = sample.state.arm_id.clone();
    let raster = source
        .load(&sample.image_path)
        .map_err(|source| PipelineError::FrameImage {
            frame_index: sample.frame_index,
            arm_id: arm_id.clone(),
            source,
        })?;
    let ee_pose = inputs.chain.fk(&sample.state.q).map_err(|source| {
        PipelineError::FrameKinematics {
            frame_index: sample.frame_index,
            arm_id: arm_id.clone(),
            source,
        }
    })?;
    let (geometry, image) = generate_frame(
        &raster,
        &ee_pose,
        &inputs.calib,
        &inputs.policy,
        sample.sync_residual,
    );

    let mut flags: Vec<String> = Vec::new();
    if sample.sync_flagged {
        flags.push(quality_flags::SYNC_FLAGGED.to_string());
    }
    if geometry.padding_ratio >= 0.5 {
        flags.push(quality_flags::BOUNDARY_HEAVY.to_string());
    }
    flags.sort();

    let p_cam = crate::camera::to_camera_frame(&inputs.calib, ee_pose.translation());
    let record = RoiRecord {
        frame_index: sample.frame_index,
        timestamp: sample.image_t,
        camera_id: params.camera_id.clone(),
        robot_id: sample.state.robot_id.clone(),
        arm_id,
        valid_projection: geometry.valid_projection,
        projected_center: geometry.projected_center.map(|(u, v)| [u, v]),
        offset_center: geometry.offset_center.map(|(u, v)| [u, v]),
        crop_rect: geometry.crop_rect,
        ell: geometry.ell,
        in_frame_ratio: geometry.in_frame_ratio,
        padding_ratio: geometry.padding_ratio,
        confidence: geometry.confidence,
        ee_pose_base: ee_pose.to_row_major().to_vec(),
        ee_point_camera: [p_cam.x, p_cam.y, p_cam.z],
        sync_residual: sample.sync_residual,
        teleop,
        quality_flags: flags,
        lineage: lineage.clone(),
    };
    Ok((record, image))
}

/// Writes a generated dataset (records + ROI images) under `root`.
pub fn write_dataset(
    root: &Path,
    result: &GenerateResult,
) -> Result<String, crate::manifest::ManifestError> {
    let roi_dir = root.join(crate::manifest::ROI_DIR);
    std::fs::create_dir_all(&roi_dir).map_err(|source| crate::manifest::ManifestError::Io {
        path: roi_dir.display().to_string(),
        source,
    })?;
    for (name, image) in &result.images {
        let path: PathBuf = roi_dir.join(name);
        image
            .pixels
            .save_png(&path)
            .map_err(|e| crate::manifest::ManifestError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
    }
    crate::manifest::write_records(
        &result.records,
        &root.join(crate::manifest::RECORDS_FILE),
    )
}
