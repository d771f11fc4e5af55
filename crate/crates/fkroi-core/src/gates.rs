//! Quality-gate statistics and pass/fail reports over record streams.
//!
//! Thresholds are inclusive. A gate whose statistic has no data (empty
//! stream, single frame) reports an explicit not-applicable sentinel and
//! does not pass — an empty dataset never validates silently. Statistics
//! are computed over the stream sorted by (timestamp, arm), so they are
//! invariant to input permutation.

use serde::{Deserialize, Serialize};

use crate::manifest::RoiRecord;
use crate::sync::{FrameSample, PairingSummary, StateRecord};

/// Inclusive gate thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateThresholds {
    /// Max allowed |sync residual| over all frames, seconds.
    pub max_sync_residual: f64,
    /// Min share of frames with a valid, at least partially in-frame
    /// projection.
    pub min_projection_validity_ratio: f64,
    /// Max RMS frame-to-frame ROI center step, pixels (worst arm).
    pub max_jitter_pos: f64,
    /// Max RMS frame-to-frame crop scale step, pixels (worst arm).
    pub max_jitter_scale: f64,
    pub min_mean_in_frame_ratio: f64,
    pub max_mean_padding_ratio: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            max_sync_residual: crate::sync::DEFAULT_SYNC_TOLERANCE_S,
            min_projection_validity_ratio: 0.98,
            max_jitter_pos: 25.0,
            max_jitter_scale: 10.0,
            min_mean_in_frame_ratio: 0.8,
            max_mean_padding_ratio: 0.2,
        }
    }
}

/// One evaluated gate. `statistic` is `None` when the stream carried no
/// data for it; such gates never pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub name: String,
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

/// Frame-to-frame stability of one arm's ROI stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterStats {
    /// RMS of consecutive offset-center displacements, pixels.
    pub pos_rms: Option<f64>,
    /// RMS of consecutive crop-scale differences, pixels.
    pub scale_rms: Option<f64>,
    /// Consecutive valid pairs used for the statistic.
    pub pairs_used: usize,
    /// Consecutive pairs skipped because one side was invalid.
    pub pairs_skipped_invalid: usize,
}

/// Windowed means over the time-ordered stream, used as drift proxies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftWindow {
    pub start_index: usize,
    pub frames: usize,
    pub mean_in_frame_ratio: f64,
    pub mean_sync_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub window: usize,
    pub windows: Vec<DriftWindow>,
}

/// Full validation report: per-gate outcomes, per-arm jitter, drift
/// proxies, and frame accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub frames_total: usize,
    pub frames_valid_projection: usize,
    pub arms: Vec<String>,
    pub gates: Vec<GateCheck>,
    pub aggregate_pass: bool,
    pub jitter_per_arm: Vec<(String, JitterStats)>,
    pub drift: DriftSeries,
    pub unmatched_images: usize,
    pub out_of_tolerance_pairs: usize,
}

impl GateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Human-readable one-line-per-gate summary.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "frames: {} total, {} valid projections\n",
            self.frames_total, self.frames_valid_projection
        ));
        for gate in &self.gates {
            let stat = match gate.statistic {
                Some(v) => format!("{v:.6}"),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{} {:<32} statistic {} vs threshold {}\n",
                if gate.pass { "PASS" } else { "FAIL" },
                gate.name,
                stat,
                gate.threshold
            ));
        }
        out.push_str(&format!(
            "aggregate: {}\n",
            if self.aggregate_pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Share of frames with a valid projection that lands at least partially in
/// frame. Empty input yields `None`, never NaN.
pub fn projection_validity_ratio(records: &[RoiRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let good = records
        .iter()
        .filter(|r| r.valid_projection && r.in_frame_ratio > 0.0)
        .count();
    Some(good as f64 / records.len() as f64)
}

/// RMS frame-to-frame variation of ROI position and scale for one arm's
/// time-ordered records. Pairs spanning an invalid frame are excluded and
/// counted separately; fewer than one usable pair yields `None` statistics.
pub fn jitter(records: &[RoiRecord]) -> JitterStats {
    let mut pos_sq = 0.0f64;
    let mut scale_sq = 0.0f64;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for win in records.windows(2) {
        let (a, b) = (&win[0], &win[1]);
        match (a.offset_center, b.offset_center, a.ell, b.ell) {
            (Some(ca), Some(cb), Some(ea), Some(eb)) => {
                let dx = cb[0] - ca[0];
                let dy = cb[1] - ca[1];
                pos_sq += dx * dx + dy * dy;
                let de = eb - ea;
                scale_sq += de * de;
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    if used == 0 {
        JitterStats {
            pos_rms: None,
            scale_rms: None,
            pairs_used: 0,
            pairs_skipped_invalid: skipped,
        }
    } else {
        JitterStats {
            pos_rms: Some((pos_sq / used as f64).sqrt()),
            scale_rms: Some((scale_sq / used as f64).sqrt()),
            pairs_used: used,
            pairs_skipped_invalid: skipped,
        }
    }
}

/// Default drift window in frames.
pub const DEFAULT_DRIFT_WINDOW: usize = 100;

fn drift_series(records: &[RoiRecord], window: usize) -> DriftSeries {
    let window = window.max(1);
    let mut windows = Vec::new();
    for (i, chunk) in records.chunks(window).enumerate() {
        let n = chunk.len() as f64;
        windows.push(DriftWindow {
            start_index: i * window,
            frames: chunk.len(),
            mean_in_frame_ratio: chunk.iter().map(|r| r.in_frame_ratio).sum::<f64>() / n,
            mean_sync_residual: chunk.iter().map(|r| r.sync_residual).sum::<f64>() / n,
        });
    }
    DriftSeries { window, windows }
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> Option<f64> {
    if count == 0 {
        None
    } else {
        Some(values.sum::<f64>() / count as f64)
    }
}

/// Evaluates every gate over the record stream and the pairing result.
///
/// Records are re-sorted by (timestamp, arm) internally, so the report is
/// identical for any permutation of the same input.
pub fn aggregate_report(
    records: &[RoiRecord],
    samples: &[FrameSample],
    pairing: &PairingSummary,
    thresholds: &GateThresholds,
    drift_window: usize,
) -> GateReport {
    let mut ordered: Vec<&RoiRecord> = records.iter().collect();
    ordered.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.arm_id.cmp(&b.arm_id))
    });
    let ordered: Vec<RoiRecord> = ordered.into_iter().cloned().collect();

    let mut arms: Vec<String> = ordered.iter().map(|r| r.arm_id.clone()).collect();
    arms.sort();
    arms.dedup();

    let frames_total = ordered.len();
    let frames_valid = ordered.iter().filter(|r| r.valid_projection).count();

    // Sync gate: worst absolute residual across all frames.
    let max_residual = ordered
        .iter()
        .map(|r| r.sync_residual.abs())
        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))));

    let validity = projection_validity_ratio(&ordered);

    let mut jitter_per_arm = Vec::new();
    for arm in &arms {
        let arm_records: Vec<RoiRecord> = ordered
            .iter()
            .filter(|r| &r.arm_id == arm)
            .cloned()
            .collect();
        jitter_per_arm.push((arm.clone(), jitter(&arm_records)));
    }
    // Gate on the worst arm.
    let jitter_pos = jitter_per_arm
        .iter()
        .filter_map(|(_, j)| j.pos_rms)
        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))));
    let jitter_scale = jitter_per_arm
        .iter()
        .filter_map(|(_, j)| j.scale_rms)
        .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))));

    let mean_in_frame = mean(ordered.iter().map(|r| r.in_frame_ratio), frames_total);
    let mean_padding = mean(ordered.iter().map(|r| r.padding_ratio), frames_total);

    let gate = |name: &str, statistic: Option<f64>, threshold: f64, upper: bool| GateCheck {
        name: name.to_string(),
        statistic,
        threshold,
        pass: match statistic {
            Some(v) => {
                if upper {
                    v <= threshold
                } else {
                    v >= threshold
                }
            }
            None => false,
        },
    };

    let gates = vec![
        gate(
            "max_sync_residual",
            max_residual,
            thresholds.max_sync_residual,
            true,
        ),
        gate(
            "min_projection_validity_ratio",
            validity,
            thresholds.min_projection_validity_ratio,
            false,
        ),
        gate("max_jitter_pos", jitter_pos, thresholds.max_jitter_pos, true),
        gate(
            "max_jitter_scale",
            jitter_scale,
            thresholds.max_jitter_scale,
            true,
        ),
        gate(
            "min_mean_in_frame_ratio",
            mean_in_frame,
            thresholds.min_mean_in_frame_ratio,
            false,
        ),
        gate(
            "max_mean_padding_ratio",
            mean_padding,
            thresholds.max_mean_padding_ratio,
            true,
        ),
    ];
    let aggregate_pass = gates.iter().all(|g| g.pass);

    GateReport {
        frames_total,
        frames_valid_projection: frames_valid,
        arms,
        gates,
        aggregate_pass,
        jitter_per_arm,
        drift: drift_series(&ordered, drift_window),
        unmatched_images: pairing.unmatched_images,
        out_of_tolerance_pairs: samples.iter().filter(|s| s.sync_flagged).count(),
    }
}

/// Per-frame teleop control-state metrics for one arm's state stream.
///
/// Latency is state time minus command time; control frequency is the
/// reciprocal of the median inter-state gap over a trailing window of
/// `window` gaps; the mapping residual is the translation distance between
/// the mapped operator pose and the commanded pose. Records without teleop
/// fields yield `None` entries.
pub fn teleop_metrics(
    states: &[StateRecord],
    window: usize,
) -> Vec<crate::manifest::TeleopMetrics> {
    let window = window.max(1);
    let mut gaps: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(states.len());
    for (i, state) in states.iter().enumerate() {
        if i > 0 {
            gaps.push(state.t - states[i - 1].t);
        }
        let control_hz = if gaps.is_empty() {
            None
        } else {
            let start = gaps.len().saturating_sub(window);
            let mut recent: Vec<f64> = gaps[start..].to_vec();
            recent.sort_by(f64::total_cmp);
            let mid = recent.len() / 2;
            let median = if recent.len() % 2 == 1 {
                recent[mid]
            } else {
                (recent[mid - 1] + recent[mid]) / 2.0
            };
            if median > 0.0 {
                Some(1.0 / median)
            } else {
                None
            }
        };
        match &state.teleop {
            Some(teleop) => {
                let delta = teleop.mapped_operator_pose.translation() - teleop.cmd_pose.translation();
                out.push(crate::manifest::TeleopMetrics {
                    latency_s: Some(state.t - teleop.t_cmd),
                    control_hz,
                    mapping_residual_m: Some(delta.norm()),
                });
            }
            None => out.push(crate::manifest::TeleopMetrics {
                latency_s: None,
                control_hz: None,
                mapping_residual_m: None,
            }),
        }
    }
    out
}
