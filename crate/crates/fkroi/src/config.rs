//! Run configuration: a JSON file with per-subcommand path requirements.
//! Relative paths resolve against the config file's directory; every file a
//! stage needs is loaded and parsed up front, before the stage touches the
//! output root.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use fkroi_core::camera::CalibrationSet;
use fkroi_core::gates::GateThresholds;
use fkroi_core::kinematics::KinematicChain;
use fkroi_core::pipeline::PipelineInputs;
use fkroi_core::roi::RoiPolicy;
use fkroi_core::sync::{parse_image_index, parse_state_log};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    state_log: Option<String>,
    image_index: Option<String>,
    calibration: Option<String>,
    chain: Option<String>,
    policy: Option<String>,
    output_root: Option<String>,
    #[serde(default = "default_camera_id")]
    camera_id: String,
    #[serde(default = "default_sync_tolerance")]
    sync_tolerance_s: f64,
    #[serde(default)]
    arms: Option<Vec<String>>,
    #[serde(default = "default_drift_window")]
    drift_window: usize,
    #[serde(default = "default_teleop_window")]
    teleop_window: usize,
    #[serde(default)]
    gates: Option<GateThresholds>,
    #[serde(default = "default_access_policy")]
    access_policy: String,
    #[serde(default)]
    analysis: Option<RawAnalysis>,
    #[serde(default)]
    replay: Option<RawReplay>,
}

fn default_camera_id() -> String {
    "cam0".to_string()
}
fn default_sync_tolerance() -> f64 {
    fkroi_core::sync::DEFAULT_SYNC_TOLERANCE_S
}
fn default_drift_window() -> usize {
    fkroi_core::gates::DEFAULT_DRIFT_WINDOW
}
fn default_teleop_window() -> usize {
    50
}
fn default_access_policy() -> String {
    "unrestricted".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAnalysis {
    #[serde(default = "default_global_input")]
    pub global_input_px: u32,
    #[serde(default = "default_patch")]
    pub patch_px: u32,
}

fn default_global_input() -> u32 {
    256
}
fn default_patch() -> u32 {
    16
}

impl Default for RawAnalysis {
    fn default() -> Self {
        Self {
            global_input_px: default_global_input(),
            patch_px: default_patch(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReplay {
    /// Scene spec path; the built-in reference scene is used when absent.
    pub scene: Option<String>,
    #[serde(default = "default_replay_frames")]
    pub n_frames: usize,
    #[serde(default = "default_max_residual")]
    pub max_center_residual_px: f64,
    #[serde(default = "default_latency_levels")]
    pub latency_levels_s: Vec<f64>,
    #[serde(default = "default_drift_levels")]
    pub extrinsics_drift_levels_rad: Vec<f64>,
}

fn default_replay_frames() -> usize {
    200
}
fn default_max_residual() -> f64 {
    1.0
}
fn default_latency_levels() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.20, 0.40]
}
fn default_drift_levels() -> Vec<f64> {
    vec![0.0, 0.002, 0.005]
}

impl Default for RawReplay {
    fn default() -> Self {
        Self {
            scene: None,
            n_frames: default_replay_frames(),
            max_center_residual_px: default_max_residual(),
            latency_levels_s: default_latency_levels(),
            extrinsics_drift_levels_rad: default_drift_levels(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub config_dir: PathBuf,
    pub state_log: Option<PathBuf>,
    pub image_index: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub chain: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    /// Input path strings exactly as written in the config, for manifests.
    pub input_strings: InputStrings,
    pub camera_id: String,
    pub sync_tolerance_s: f64,
    pub arms: Option<Vec<String>>,
    pub drift_window: usize,
    pub teleop_window: usize,
    pub gates: GateThresholds,
    pub access_policy: String,
    pub analysis: RawAnalysis,
    pub replay: RawReplay,
}

#[derive(Debug, Default, Clone)]
pub struct InputStrings {
    pub state_log: Option<String>,
    pub image_index: Option<String>,
    pub calibration: Option<String>,
    pub chain: Option<String>,
    pub policy: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let raw: RawConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let resolve = |p: &Option<String>| p.as_ref().map(|p| dir.join(p));
        Ok(RunConfig {
            state_log: resolve(&raw.state_log),
            image_index: resolve(&raw.image_index),
            calibration: resolve(&raw.calibration),
            chain: resolve(&raw.chain),
            policy: resolve(&raw.policy),
            output_root: resolve(&raw.output_root),
            input_strings: InputStrings {
                state_log: raw.state_log,
                image_index: raw.image_index,
                calibration: raw.calibration,
                chain: raw.chain,
                policy: raw.policy,
            },
            config_dir: dir,
            camera_id: raw.camera_id,
            sync_tolerance_s: raw.sync_tolerance_s,
            arms: raw.arms,
            drift_window: raw.drift_window,
            teleop_window: raw.teleop_window,
            gates: raw.gates.unwrap_or_default(),
            access_policy: raw.access_policy,
            analysis: raw.analysis.unwrap_or_default(),
            replay: raw.replay.unwrap_or_default(),
        })
    }

    pub fn output_root(&self) -> Result<&Path> {
        match &self.output_root {
            Some(p) => Ok(p),
            None => bail!("config has no output_root and --output was not given"),
        }
    }

    fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        match value {
            Some(p) => Ok(p.clone()),
            None => bail!("config is missing required path {field:?} for this subcommand"),
        }
    }

    /// Loads and parses all five pipeline inputs. Fails before any stage
    /// runs if one is missing or malformed.
    pub fn load_inputs(&self) -> Result<LoadedInputs> {
        let state_log_path = self.require("state_log", &self.state_log)?;
        let image_index_path = self.require("image_index", &self.image_index)?;
        let calibration_path = self.require("calibration", &self.calibration)?;
        let chain_path = self.require("chain", &self.chain)?;
        let policy_path = self.require("policy", &self.policy)?;

        let read = |p: &Path| -> Result<String> {
            std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
        };
        let chain = KinematicChain::from_json(&read(&chain_path)?)
            .with_context(|| format!("invalid kinematic chain {}", chain_path.display()))?;
        let calib = CalibrationSet::from_json(&read(&calibration_path)?)
            .with_context(|| format!("invalid calibration {}", calibration_path.display()))?;
        let policy = RoiPolicy::from_json(&read(&policy_path)?)
            .with_context(|| format!("invalid policy {}", policy_path.display()))?;
        let states = parse_state_log(&read(&state_log_path)?)
            .with_context(|| format!("invalid state log {}", state_log_path.display()))?;
        let images = parse_image_index(&read(&image_index_path)?)
            .with_context(|| format!("invalid image index {}", image_index_path.display()))?;

        let image_root = image_index_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedInputs {
            pipeline: PipelineInputs {
                chain,
                calib,
                policy,
                states,
                images,
            },
            image_root,
            paths: ResolvedInputPaths {
                state_log: state_log_path,
                image_index: image_index_path,
                calibration: calibration_path,
                chain: chain_path,
                policy: policy_path,
            },
        })
    }
}

pub struct ResolvedInputPaths {
    pub state_log: PathBuf,
    pub image_index: PathBuf,
    pub calibration: PathBuf,
    pub chain: PathBuf,
    pub policy: PathBuf,
}

pub struct LoadedInputs {
    pub pipeline: PipelineInputs,
    /// Directory that image-index paths are relative to.
    pub image_root: PathBuf,
    pub paths: ResolvedInputPaths,
}
