//! `fkroi` — operator CLI for the FK-projected ROI pipeline.
//!
//! Subcommands mirror the pipeline stages: `generate` derives records and
//! ROI images from logs, `validate` runs quality gates, `package` builds the
//! checksummed manifest, `verify` re-checks a dataset against its manifest,
//! `analyze` prints foveation economics, and `replay` runs the synthetic
//! ground-truth harness.
//!
//! Progress goes to stderr; machine-readable results are written to files.
//! Exit codes: 0 success, 1 gate or verification failure, 2 input error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use fkroi_core::foveation::{density_gain, token_accounting, Footprint, ViewSpec};
use fkroi_core::gates::aggregate_report;
use fkroi_core::manifest::{
    build_manifest, parse_records, verify_regeneration, ArtifactRef, CreationParams,
    DatasetManifest, InputRefs, RECORDS_FILE,
};
use fkroi_core::pipeline::{
    generate_dataset, pair_all_arms, write_dataset, GenerateParams, ImageSource,
};
use fkroi_core::replay::{
    degradation_curve, emit_dataset, end_to_end_check, reference_policy, reference_scene,
    Perturbation, ReplayCheckReport, SyntheticScene,
};

#[derive(Parser)]
#[command(name = "fkroi", version, about = "FK-projected ROI dataset pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides the config's output_root.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Arm to process; may repeat. Overrides the config's arm list.
    #[arg(long = "arm")]
    arms: Vec<String>,
    /// Worker threads for per-frame generation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pair streams and derive ROI records and images.
    Generate(CommonArgs),
    /// Evaluate quality gates over a generated dataset.
    Validate(CommonArgs),
    /// Build the checksummed dataset manifest.
    Package(CommonArgs),
    /// Re-check a dataset against its manifest.
    Verify(CommonArgs),
    /// Print density-gain and token-budget accounting.
    Analyze(CommonArgs),
    /// Run the synthetic replay harness and emit its dataset.
    Replay(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&CommonArgs, fn(&RunConfig) -> Result<i32>) = match &cli.command {
        Command::Generate(a) => (a, cmd_generate),
        Command::Validate(a) => (a, cmd_validate),
        Command::Package(a) => (a, cmd_package),
        Command::Verify(a) => (a, cmd_verify),
        Command::Analyze(a) => (a, cmd_analyze),
        Command::Replay(a) => (a, cmd_replay),
    };
    match prepare(common).and_then(|cfg| run(&cfg)) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn prepare(common: &CommonArgs) -> Result<RunConfig> {
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot configure worker threads")?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(output) = &common.output {
        cfg.output_root = Some(output.clone());
    }
    if !common.arms.is_empty() {
        cfg.arms = Some(common.arms.clone());
    }
    Ok(cfg)
}

fn generate_params(cfg: &RunConfig) -> GenerateParams {
    GenerateParams {
        camera_id: cfg.camera_id.clone(),
        sync_tolerance_s: cfg.sync_tolerance_s,
        arms: cfg.arms.clone(),
        teleop_window: cfg.teleop_window,
    }
}

fn read_records(root: &Path) -> Result<Vec<fkroi_core::manifest::RoiRecord>> {
    let path = root.join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_records(&text)?)
}

fn cmd_generate(cfg: &RunConfig) -> Result<i32> {
    let inputs = cfg.load_inputs()?;
    let root = cfg.output_root()?;
    std::fs::create_dir_all(root)
        .with_context(|| format!("cannot create output root {}", root.display()))?;
    let params = generate_params(cfg);
    let result = generate_dataset(
        &inputs.pipeline,
        &params,
        &ImageSource::Directory(&inputs.image_root),
    )?;
    let checksum = write_dataset(root, &result)?;
    eprintln!(
        "generate: {} records ({} flagged out-of-tolerance, {} images unmatched) -> {}",
        result.records.len(),
        result.pairing.out_of_tolerance,
        result.pairing.unmatched_images,
        root.display()
    );
    eprintln!("generate: records sha256 {checksum}");
    Ok(0)
}

fn cmd_validate(cfg: &RunConfig) -> Result<i32> {
    let inputs = cfg.load_inputs()?;
    let root = cfg.output_root()?;
    let records = read_records(root)?;
    let params = generate_params(cfg);
    let (tasks, pairing) = pair_all_arms(&inputs.pipeline, &params)?;
    let samples: Vec<_> = tasks.into_iter().map(|(s, _)| s).collect();
    let report = aggregate_report(&records, &samples, &pairing, &cfg.gates, cfg.drift_window);
    let report_path = root.join("gate_report.json");
    std::fs::write(&report_path, report.to_json())
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    eprint!("{}", report.summary_text());
    eprintln!("validate: report -> {}", report_path.display());
    Ok(if report.aggregate_pass { 0 } else { 1 })
}

fn cmd_package(cfg: &RunConfig) -> Result<i32> {
    let inputs = cfg.load_inputs()?;
    let root = cfg.output_root()?;
    let hash = |p: &Path| -> Result<String> {
        Ok(fkroi_core::manifest::hash_file(p)?)
    };
    let strings = &cfg.input_strings;
    let missing = || anyhow::anyhow!("input path string missing from config");
    let input_refs = InputRefs {
        state_log: ArtifactRef {
            path: strings.state_log.clone().ok_or_else(missing)?,
            sha256: hash(&inputs.paths.state_log)?,
        },
        image_index: ArtifactRef {
            path: strings.image_index.clone().ok_or_else(missing)?,
            sha256: hash(&inputs.paths.image_index)?,
        },
        calibration: ArtifactRef {
            path: strings.calibration.clone().ok_or_else(missing)?,
            sha256: hash(&inputs.paths.calibration)?,
        },
        chain: ArtifactRef {
            path: strings.chain.clone().ok_or_else(missing)?,
            sha256: hash(&inputs.paths.chain)?,
        },
        policy: ArtifactRef {
            path: strings.policy.clone().ok_or_else(missing)?,
            sha256: hash(&inputs.paths.policy)?,
        },
    };
    let lineage = fkroi_core::manifest::LineageTuple::new(
        inputs.pipeline.calib.intrinsics.version.clone(),
        inputs.pipeline.calib.extrinsics_version.clone(),
        inputs.pipeline.chain.version().to_string(),
        inputs.pipeline.policy.policy_version.clone(),
    );
    let arms = cfg
        .arms
        .clone()
        .unwrap_or_else(|| fkroi_core::pipeline::arms_in_log(&inputs.pipeline.states));
    let manifest = build_manifest(
        root,
        input_refs,
        lineage,
        CreationParams {
            camera_id: cfg.camera_id.clone(),
            sync_tolerance_s: cfg.sync_tolerance_s,
            arms,
        },
        cfg.access_policy.clone(),
    )?;
    manifest.write(root)?;
    eprintln!(
        "package: {} ({} roi images) -> {}",
        manifest.dataset_id,
        manifest.roi_images.len(),
        root.join(fkroi_core::manifest::MANIFEST_FILE).display()
    );
    Ok(0)
}

fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let root = cfg.output_root()?;
    let manifest = DatasetManifest::load(root)?;
    let report = verify_regeneration(&manifest, root);
    let report_path = root.join("verify_report.json");
    std::fs::write(&report_path, report.to_json())
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    for check in report.mismatches() {
        eprintln!(
            "verify: MISMATCH {} ({})",
            check.path,
            check.note.as_deref().unwrap_or("checksum mismatch")
        );
    }
    eprintln!(
        "verify: {} of {} artifacts match -> {}",
        report.artifacts.iter().filter(|a| a.ok).count(),
        report.artifacts.len(),
        report_path.display()
    );
    Ok(if report.pass { 0 } else { 1 })
}

fn cmd_analyze(cfg: &RunConfig) -> Result<i32> {
    let inputs = cfg.load_inputs()?;
    let root = cfg.output_root()?;
    let records = read_records(root)?;
    let policy = &inputs.pipeline.policy;
    let intr = &inputs.pipeline.calib.intrinsics;
    let analysis = &cfg.analysis;

    // Density gain per valid record, from its actual crop width.
    let mut rho_values: Vec<f64> = Vec::new();
    for record in &records {
        if let Some(rect) = record.crop_rect {
            rho_values.push(density_gain(
                intr.width as f64,
                analysis.global_input_px as f64,
                rect.w as f64,
                policy.output_size_px as f64,
            ));
        }
    }

    // Token accounting per frame over frames where every arm is valid; all
    // views must share one resolution for the count to be meaningful.
    anyhow::ensure!(
        analysis.global_input_px == policy.output_size_px,
        "token accounting assumes the global view resolution ({}) equals the ROI output size ({})",
        analysis.global_input_px,
        policy.output_size_px
    );
    let mut frames: std::collections::BTreeMap<u64, Vec<&fkroi_core::manifest::RoiRecord>> =
        std::collections::BTreeMap::new();
    for record in &records {
        frames.entry(record.frame_index).or_default().push(record);
    }
    let mut token_stats = None;
    let mut overlaps: Vec<f64> = Vec::new();
    let mut skipped_frames = 0usize;
    for group in frames.values() {
        if group.iter().any(|r| r.crop_rect.is_none()) {
            skipped_frames += 1;
            continue;
        }
        let mut views = vec![ViewSpec {
            resolution: analysis.global_input_px,
            is_roi: false,
            footprint: Footprint::FullFrame,
        }];
        for record in group {
            views.push(ViewSpec {
                resolution: policy.output_size_px,
                is_roi: true,
                footprint: Footprint::Rect(record.crop_rect.unwrap()),
            });
        }
        let stats = token_accounting(&views, analysis.patch_px, (intr.width, intr.height))?;
        overlaps.push(stats.duplication_overlap);
        token_stats.get_or_insert(stats);
    }

    let summary = |values: &[f64]| -> Option<serde_json::Value> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(serde_json::json!({"mean": mean, "min": min, "max": max, "n": values.len()}))
    };
    let report = serde_json::json!({
        "raw_width_px": intr.width,
        "global_input_px": analysis.global_input_px,
        "roi_output_px": policy.output_size_px,
        "patch_px": analysis.patch_px,
        "density_gain": summary(&rho_values),
        "token_stats": token_stats,
        "duplication_overlap": summary(&overlaps),
        "frames_skipped_invalid": skipped_frames,
    });
    let report_path = root.join("analysis.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("cannot write {}", report_path.display()))?;

    eprintln!("analyze: raw {}px, global {}px, roi out {}px, patch {}px",
        intr.width, analysis.global_input_px, policy.output_size_px, analysis.patch_px);
    if let Some(s) = summary(&rho_values) {
        eprintln!(
            "  density gain rho   mean {:.3}  min {:.3}  max {:.3}  ({} frames)",
            s["mean"].as_f64().unwrap(),
            s["min"].as_f64().unwrap(),
            s["max"].as_f64().unwrap(),
            s["n"].as_u64().unwrap()
        );
    }
    if let Some(stats) = token_stats {
        eprintln!(
            "  tokens             {} per view, {} total, roi fraction {:.4}",
            stats.n_per_view, stats.n_total, stats.roi_token_fraction
        );
    }
    if let Some(s) = summary(&overlaps) {
        eprintln!(
            "  duplication        mean {:.4}  min {:.4}  max {:.4}",
            s["mean"].as_f64().unwrap(),
            s["min"].as_f64().unwrap(),
            s["max"].as_f64().unwrap()
        );
    }
    eprintln!("analyze: report -> {}", report_path.display());
    Ok(0)
}

fn cmd_replay(cfg: &RunConfig) -> Result<i32> {
    let root = cfg.output_root()?;
    std::fs::create_dir_all(root)
        .with_context(|| format!("cannot create output root {}", root.display()))?;
    let replay_cfg = &cfg.replay;

    let scene = match &replay_cfg.scene {
        Some(rel) => {
            let path = cfg.config_dir.join(rel);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read scene {}", path.display()))?;
            SyntheticScene::from_json(&text)?
        }
        None => reference_scene(replay_cfg.n_frames),
    };
    let policy = match &cfg.policy {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read policy {}", path.display()))?;
            fkroi_core::roi::RoiPolicy::from_json(&text)?
        }
        None => reference_policy(),
    };

    // Emit the scene as a plain dataset plus a ready-to-run config.
    let emitted = emit_dataset(&scene, root)?;
    std::fs::write(root.join("policy.json"), policy.to_json())
        .with_context(|| format!("cannot write {}", root.join("policy.json").display()))?;
    let run_config = serde_json::json!({
        "state_log": "state_log.jsonl",
        "image_index": "image_index.jsonl",
        "calibration": "calibration.json",
        "chain": "chain.json",
        "policy": "policy.json",
        "output_root": "derived",
        "camera_id": "replay-cam",
        "sync_tolerance_s": cfg.sync_tolerance_s,
    });
    std::fs::write(
        root.join("run_config.json"),
        serde_json::to_string_pretty(&run_config)?,
    )
    .context("cannot write run_config.json")?;

    let zero = end_to_end_check(
        &scene,
        &policy,
        Perturbation::default(),
        cfg.sync_tolerance_s,
    )?;
    let latency_levels: Vec<Perturbation> = replay_cfg
        .latency_levels_s
        .iter()
        .map(|&latency_shift_s| Perturbation {
            latency_shift_s,
            extrinsics_rot_drift_rad: 0.0,
        })
        .collect();
    let drift_levels: Vec<Perturbation> = replay_cfg
        .extrinsics_drift_levels_rad
        .iter()
        .map(|&extrinsics_rot_drift_rad| Perturbation {
            latency_shift_s: 0.0,
            extrinsics_rot_drift_rad,
        })
        .collect();
    let latency_curve = degradation_curve(&scene, &policy, &latency_levels, cfg.sync_tolerance_s)?;
    let drift_curve = degradation_curve(&scene, &policy, &drift_levels, cfg.sync_tolerance_s)?;

    let max_residual = zero.max_residual_fully_in_frame_px;
    let validity = zero.projection_validity_ratio;
    let pass = max_residual.is_some_and(|r| r <= replay_cfg.max_center_residual_px)
        && validity == Some(1.0);

    let curve_summary = |curve: &[ReplayCheckReport]| -> Vec<serde_json::Value> {
        curve
            .iter()
            .map(|report| {
                serde_json::json!({
                    "perturbation": report.perturbation,
                    "mean_residual_px": report.mean_residual_px,
                    "max_residual_fully_in_frame_px": report.max_residual_fully_in_frame_px,
                    "projection_validity_ratio": report.projection_validity_ratio,
                    "mean_in_frame_ratio": report.mean_in_frame_ratio,
                    "marker_missing": report.marker_missing,
                })
            })
            .collect()
    };
    let report = serde_json::json!({
        "pass": pass,
        "max_center_residual_px": replay_cfg.max_center_residual_px,
        "zero_perturbation": zero,
        "latency_curve": curve_summary(&latency_curve),
        "extrinsics_drift_curve": curve_summary(&drift_curve),
    });
    let report_path = root.join("replay_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("cannot write {}", report_path.display()))?;

    eprintln!(
        "replay: {} frames emitted under {}",
        scene.trajectory.len(),
        emitted.root.display()
    );
    eprintln!(
        "replay: zero-perturbation max residual {} px (bound {} px), validity {:?}",
        max_residual.map_or("n/a".to_string(), |r| format!("{r:.3}")),
        replay_cfg.max_center_residual_px,
        validity
    );
    for (level, report) in latency_levels.iter().zip(&latency_curve) {
        eprintln!(
            "replay: latency {:+.3}s -> mean residual {} px",
            level.latency_shift_s,
            report
                .mean_residual_px
                .map_or("n/a".to_string(), |r| format!("{r:.3}"))
        );
    }
    eprintln!("replay: report -> {}", report_path.display());
    Ok(if pass { 0 } else { 1 })
}
