//! Timestamp pairing of image and robot-state streams.
//!
//! Each image is paired with the nearest-in-time state record (no
//! interpolation: FK over interpolated joint vectors would silently smooth
//! the dynamics). Ties break toward the earlier state. Pairs whose residual
//! exceeds the tolerance are flagged, never dropped, so the error stays
//! auditable downstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{KinematicsError, Pose};

/// Default pairing tolerance in seconds.
pub const DEFAULT_SYNC_TOLERANCE_S: f64 = 0.010;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("{stream} stream is not sorted by time at index {index}")]
    UnsortedInput { stream: &'static str, index: usize },
    #[error("state log line {line}: {source}")]
    BadStateLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("state log line {line}: {source}")]
    BadStatePose {
        line: usize,
        source: KinematicsError,
    },
    #[error("image index line {line}: {source}")]
    BadImageLine {
        line: usize,
        source: serde_json::Error,
    },
}

/// Operator-loop context attached to a state record when the log comes from
/// teleoperation.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleopState {
    /// Time the operator command was issued, seconds.
    pub t_cmd: f64,
    /// Commanded end-effector pose in the base frame.
    pub cmd_pose: Pose,
    /// Operator pose mapped into the robot frame.
    pub mapped_operator_pose: Pose,
}

/// One robot-state sample from the log.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub t: f64,
    pub robot_id: String,
    pub arm_id: String,
    pub q: Vec<f64>,
    pub teleop: Option<TeleopState>,
    /// Free-form buffering/latency annotation, carried through unparsed.
    pub buffering: Option<serde_json::Value>,
}

/// One synchronized (image, state) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    /// Position of the image in the image index; names the output files.
    pub frame_index: u64,
    pub image_t: f64,
    pub image_path: String,
    pub state: StateRecord,
    /// Signed residual: image_t - state.t, seconds.
    pub sync_residual: f64,
    /// True when |sync_residual| exceeded the pairing tolerance.
    pub sync_flagged: bool,
}

/// Stream-level accounting emitted next to the pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairingSummary {
    pub matched: usize,
    pub unmatched_images: usize,
    pub unused_states: usize,
    pub out_of_tolerance: usize,
}

/// Pairs every image with its nearest state. An empty state stream leaves
/// every image unmatched; otherwise every image gets a pair.
pub fn pair_streams(
    images: &[(f64, String)],
    states: &[StateRecord],
    tolerance_s: f64,
) -> Result<(Vec<FrameSample>, PairingSummary), SyncError> {
    for (i, win) in images.windows(2).enumerate() {
        if win[1].0 < win[0].0 {
            return Err(SyncError::UnsortedInput {
                stream: "image",
                index: i + 1,
            });
        }
    }
    for (i, win) in states.windows(2).enumerate() {
        if win[1].t <= win[0].t {
            return Err(SyncError::UnsortedInput {
                stream: "state",
                index: i + 1,
            });
        }
    }

    if states.is_empty() {
        let summary = PairingSummary {
            matched: 0,
            unmatched_images: images.len(),
            unused_states: 0,
            out_of_tolerance: 0,
        };
        return Ok((Vec::new(), summary));
    }

    let mut used = vec![false; states.len()];
    let mut samples = Vec::with_capacity(images.len());
    let mut out_of_tolerance = 0usize;
    for (index, (t, path)) in images.iter().enumerate() {
        let idx = nearest_state(states, *t);
        used[idx] = true;
        let residual = t - states[idx].t;
        let flagged = residual.abs() > tolerance_s;
        if flagged {
            out_of_tolerance += 1;
        }
        samples.push(FrameSample {
            frame_index: index as u64,
            image_t: *t,
            image_path: path.clone(),
            state: states[idx].clone(),
            sync_residual: residual,
            sync_flagged: flagged,
        });
    }
    let summary = PairingSummary {
        matched: samples.len(),
        unmatched_images: 0,
        unused_states: used.iter().filter(|&&u| !u).count(),
        out_of_tolerance,
    };
    Ok((samples, summary))
}

/// Index of the state nearest to `t`; ties go to the earlier state.
fn nearest_state(states: &[StateRecord], t: f64) -> usize {
    let right = states.partition_point(|s| s.t < t);
    if right == 0 {
        return 0;
    }
    if right == states.len() {
        return states.len() - 1;
    }
    let left = right - 1;
    let d_left = (t - states[left].t).abs();
    let d_right = (states[right].t - t).abs();
    if d_left <= d_right {
        left
    } else {
        right
    }
}

// ---------------------------------------------------------------------------
// JSON Lines schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct StateLine {
    t: f64,
    robot_id: String,
    arm_id: String,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    teleop: Option<TeleopLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    buffering: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TeleopLine {
    t_cmd: f64,
    cmd_pose: Vec<f64>,
    mapped_operator_pose: Vec<f64>,
}

/// Parses a state log: one JSON record per line, blank lines ignored.
pub fn parse_state_log(text: &str) -> Result<Vec<StateRecord>, SyncError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: StateLine =
            serde_json::from_str(raw).map_err(|source| SyncError::BadStateLine { line, source })?;
        let teleop = match parsed.teleop {
            Some(t) => Some(TeleopState {
                t_cmd: t.t_cmd,
                cmd_pose: Pose::from_row_major(&t.cmd_pose)
                    .map_err(|source| SyncError::BadStatePose { line, source })?,
                mapped_operator_pose: Pose::from_row_major(&t.mapped_operator_pose)
                    .map_err(|source| SyncError::BadStatePose { line, source })?,
            }),
            None => None,
        };
        records.push(StateRecord {
            t: parsed.t,
            robot_id: parsed.robot_id,
            arm_id: parsed.arm_id,
            q: parsed.q,
            teleop,
            buffering: parsed.buffering,
        });
    }
    Ok(records)
}

pub fn state_log_to_string(records: &[StateRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = StateLine {
            t: r.t,
            robot_id: r.robot_id.clone(),
            arm_id: r.arm_id.clone(),
            q: r.q.clone(),
            teleop: r.teleop.as_ref().map(|t| TeleopLine {
                t_cmd: t.t_cmd,
                cmd_pose: t.cmd_pose.to_row_major().to_vec(),
                mapped_operator_pose: t.mapped_operator_pose.to_row_major().to_vec(),
            }),
            buffering: r.buffering.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("state serialization cannot fail"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageIndexLine {
    t: f64,
    path: String,
}

/// Parses an image index: one `{"t": seconds, "path": relative}` per line.
pub fn parse_image_index(text: &str) -> Result<Vec<(f64, String)>, SyncError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ImageIndexLine = serde_json::from_str(raw)
            .map_err(|source| SyncError::BadImageLine { line: i + 1, source })?;
        entries.push((parsed.t, parsed.path));
    }
    Ok(entries)
}

pub fn image_index_to_string(entries: &[(f64, String)]) -> String {
    let mut out = String::new();
    for (t, path) in entries {
        let line = ImageIndexLine {
            t: *t,
            path: path.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("index serialization cannot fail"));
        out.push('\n');
    }
    out
}
