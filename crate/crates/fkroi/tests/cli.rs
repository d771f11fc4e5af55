//! End-to-end subcommand tests: exit-code contract, idempotence, input
//! immutability, and the full replay -> generate -> validate -> package ->
//! verify -> analyze chain over one dataset directory.

use std::path::Path;
use std::process::Command;

use fkroi_core::replay::{emit_dataset, reference_policy, reference_scene};

fn run(args: &[&str], cwd: &Path) -> (i32, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_fkroi"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to launch fkroi");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn setup_dataset(dir: &Path, frames: usize) {
    let scene = reference_scene(frames);
    emit_dataset(&scene, dir).unwrap();
    std::fs::write(dir.join("policy.json"), reference_policy().to_json()).unwrap();
    let config = serde_json::json!({
        "state_log": "state_log.jsonl",
        "image_index": "image_index.jsonl",
        "calibration": "calibration.json",
        "chain": "chain.json",
        "policy": "policy.json",
        "output_root": "out",
        "camera_id": "replay-cam",
        "sync_tolerance_s": 0.010,
    });
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
}

fn dir_digest(dir: &Path) -> Vec<(String, String)> {
    let mut entries = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                let digest = fkroi_core::manifest::hash_file(&path).unwrap();
                entries.push((rel, digest));
            }
        }
    }
    entries.sort();
    entries
}

#[test]
fn full_chain_over_one_dataset() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 8);

    let (code, err) = run(&["generate", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("out/records.jsonl").exists());
    assert!(dir.path().join("out/roi/00000000_left.png").exists());

    let (code, err) = run(&["validate", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "validate on the perfect replay dataset: {err}");
    assert!(dir.path().join("out/gate_report.json").exists());

    let (code, err) = run(&["package", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");
    let (code, err) = run(&["verify", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");

    let (code, err) = run(&["analyze", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");
    let analysis: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/analysis.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(analysis["token_stats"]["n_per_view"], 256);
    assert!(analysis["density_gain"]["mean"].as_f64().unwrap() > 1.0);
}

#[test]
fn generate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 6);
    let (code, _) = run(&["generate", "--config", "config.json"], dir.path());
    assert_eq!(code, 0);
    let first = dir_digest(&dir.path().join("out"));
    let (code, _) = run(
        &["generate", "--config", "config.json", "--output", "out2"],
        dir.path(),
    );
    assert_eq!(code, 0);
    let second = dir_digest(&dir.path().join("out2"));
    assert_eq!(first, second);
}

#[test]
fn generate_does_not_mutate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 5);
    let inputs_before: Vec<_> = dir_digest(dir.path());
    let (code, _) = run(&["generate", "--config", "config.json"], dir.path());
    assert_eq!(code, 0);
    let inputs_after: Vec<_> = dir_digest(dir.path())
        .into_iter()
        .filter(|(rel, _)| !rel.starts_with("out"))
        .collect();
    assert_eq!(inputs_before, inputs_after);
}

#[test]
fn verify_names_a_deleted_roi_image() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 5);
    for sub in ["generate", "package"] {
        let (code, err) = run(&[sub, "--config", "config.json"], dir.path());
        assert_eq!(code, 0, "{err}");
    }
    std::fs::remove_file(dir.path().join("out/roi/00000002_left.png")).unwrap();
    let (code, err) = run(&["verify", "--config", "config.json"], dir.path());
    assert_eq!(code, 1);
    assert!(
        err.contains("00000002_left.png"),
        "mismatch report must name the missing file, got: {err}"
    );
}

#[test]
fn corrupted_roi_image_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 5);
    for sub in ["generate", "package"] {
        let (code, _) = run(&[sub, "--config", "config.json"], dir.path());
        assert_eq!(code, 0);
    }
    // Re-encode one ROI image with one pixel flipped.
    let path = dir.path().join("out/roi/00000001_left.png");
    let mut raster = fkroi_core::raster::RgbRaster::load_png(&path).unwrap();
    let flipped = raster.pixel(10, 10).map(|c| c ^ 0xFF);
    raster.set_pixel(10, 10, flipped);
    raster.save_png(&path).unwrap();
    let (code, err) = run(&["verify", "--config", "config.json"], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("00000001_left.png"), "{err}");
}

#[test]
fn missing_config_and_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(&["generate", "--config", "absent.json"], dir.path());
    assert_eq!(code, 2);

    // Config present but the chain file is missing.
    setup_dataset(dir.path(), 4);
    std::fs::remove_file(dir.path().join("chain.json")).unwrap();
    let (code, err) = run(&["generate", "--config", "config.json"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("chain.json"), "{err}");
}

#[test]
fn unknown_arm_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 4);
    let (code, err) = run(
        &["generate", "--config", "config.json", "--arm", "right"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("right"), "{err}");
}

#[test]
fn replay_subcommand_emits_consumable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "output_root": "replay-out",
        "replay": {"n_frames": 12, "latency_levels_s": [0.0, 0.05, 0.1], "extrinsics_drift_levels_rad": [0.0, 0.005]},
    });
    std::fs::write(
        dir.path().join("config.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
    let (code, err) = run(&["replay", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("replay-out/replay_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["pass"], true);

    // The emitted dataset runs through the ordinary pipeline unchanged.
    let replay_root = dir.path().join("replay-out");
    for sub in ["generate", "validate", "package", "verify"] {
        let (code, err) = run(&[sub, "--config", "run_config.json"], &replay_root);
        assert_eq!(code, 0, "{sub} on emitted dataset: {err}");
    }
}

#[test]
fn bimanual_log_yields_per_arm_records() {
    let dir = tempfile::tempdir().unwrap();
    setup_dataset(dir.path(), 6);
    // Duplicate the state log under a second arm id.
    let log_path = dir.path().join("state_log.jsonl");
    let states =
        fkroi_core::sync::parse_state_log(&std::fs::read_to_string(&log_path).unwrap()).unwrap();
    let mut both = states.clone();
    for mut s in states {
        s.arm_id = "right".into();
        // Mirror the elbow so the arms are distinguishable.
        s.q = vec![-s.q[0], -s.q[1]];
        both.push(s);
    }
    both.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.arm_id.cmp(&b.arm_id)));
    std::fs::write(&log_path, fkroi_core::sync::state_log_to_string(&both)).unwrap();

    let (code, err) = run(&["generate", "--config", "config.json"], dir.path());
    assert_eq!(code, 0, "{err}");
    let records = fkroi_core::manifest::parse_records(
        &std::fs::read_to_string(dir.path().join("out/records.jsonl")).unwrap(),
    )
    .unwrap();
    assert_eq!(records.len(), 12);
    assert!(dir.path().join("out/roi/00000000_left.png").exists());
    assert!(dir.path().join("out/roi/00000000_right.png").exists());

    // Restricting to one arm halves the output.
    let (code, _) = run(
        &["generate", "--config", "config.json", "--output", "out-left", "--arm", "left"],
        dir.path(),
    );
    assert_eq!(code, 0);
    let left_records = fkroi_core::manifest::parse_records(
        &std::fs::read_to_string(dir.path().join("out-left/records.jsonl")).unwrap(),
    )
    .unwrap();
    assert_eq!(left_records.len(), 6);
    assert!(left_records.iter().all(|r| r.arm_id == "left"));
}
