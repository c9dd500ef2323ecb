//! Drives the `disbeanet` binary end to end and checks exit codes and files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/crossing.json")
}

fn disbeanet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disbeanet"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("DISBEANET_SEED")
        .output()
        .expect("spawn disbeanet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn assert_exit(o: &Output, code: i32) {
    assert_eq!(
        o.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(o),
        stderr(o)
    );
}

/// Synthetic data plus a briefly trained model.
fn prepared(out: &Path) {
    let scen = scenario();
    assert_exit(
        &disbeanet(out, &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    assert_exit(&disbeanet(out, &["train", "--epochs", "20"]), 0);
}

#[test]
fn synth_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = disbeanet(
        dir.path(),
        &["synth", "--scenario", scenario().to_str().unwrap()],
    );
    assert_exit(&o, 0);
    for f in ["detections.jsonl", "truth.csv", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["frames"], 1200);
}

#[test]
fn missing_scenario_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope/scenario.json");
    let o = disbeanet(
        dir.path(),
        &["synth", "--scenario", missing.to_str().unwrap()],
    );
    assert_exit(&o, 2);
    assert!(
        stderr(&o).contains(missing.to_str().unwrap()),
        "{}",
        stderr(&o)
    );
}

#[test]
fn seed_env_overrides_scenario_seed() {
    let scen = scenario();
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let noisy = dir.path().join("noisy.json");
        let text = std::fs::read_to_string(&scen)
            .unwrap()
            .replace("\"pixel_noise_sd\": 0.0", "\"pixel_noise_sd\": 1.5");
        std::fs::write(&noisy, text).unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_disbeanet"))
            .args([
                "synth",
                "--scenario",
                noisy.to_str().unwrap(),
                "--out-dir",
                dir.path().to_str().unwrap(),
            ])
            .env("DISBEANET_SEED", seed)
            .output()
            .unwrap();
        assert_exit(&o, 0);
        std::fs::read(dir.path().join("detections.jsonl")).unwrap()
    };
    assert_eq!(run("5"), run("5"));
    assert_ne!(run("5"), run("6"));
}

#[test]
fn train_saves_model_and_reports_physical_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let o = disbeanet(dir.path(), &["train", "--epochs", "20"]);
    assert_exit(&o, 0);
    let out = stdout(&o);
    assert!(
        out.contains("train: 960 samples")
            && out.contains("NM")
            && out.contains("val:   240 samples"),
        "{out}"
    );
    let model: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["sizes"], serde_json::json!([7, 16, 16, 16, 2]));
}

#[test]
fn sweep_writes_one_row_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let o = disbeanet(
        dir.path(),
        &["train", "--epochs", "3", "--sweep", "1,2,3,5,20"],
    );
    assert_exit(&o, 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let depths: Vec<usize> = rdr
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(depths, [1, 2, 3, 5, 20]);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let o = disbeanet(
        dir.path(),
        &[
            "train",
            "--epochs",
            "50",
            "--lr",
            "1e6",
            "--activation",
            "relu",
            "--batch-size",
            "1",
        ],
    );
    assert_exit(&o, 3);
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn train_without_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = disbeanet(dir.path(), &["train"]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("detections.jsonl"), "{}", stderr(&o));
}

#[test]
fn track_predict_needs_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let o = disbeanet(dir.path(), &["track-predict"]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("model.json"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_single_track_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    assert_exit(&disbeanet(dir.path(), &["track-predict"]), 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("predictions.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap(),
        vec!["t", "track_id", "distance_nm", "bearing_deg"]
    );
    let ids: Vec<String> = rdr.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(ids.len(), 1200);
    assert!(ids.iter().all(|id| id == "0"));

    assert_exit(&disbeanet(dir.path(), &["georef"]), 0);
    let geo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("tracks.geojson")).unwrap()).unwrap();
    assert_eq!(geo["type"], "FeatureCollection");
    let features = geo["features"].as_array().unwrap();
    assert_eq!(features.len(), 1);
    assert_eq!(features[0]["geometry"]["type"], "LineString");
    let first = &features[0]["geometry"]["coordinates"][0];
    // (lon, lat) ordering
    assert!(first[0].as_f64().unwrap() < -117.0 && first[1].as_f64().unwrap() > 32.0);

    let o = disbeanet(dir.path(), &["eval"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("rmse distance"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 1200);
    assert!(dir.path().join("report.csv").is_file());
}

#[test]
fn empty_detections_give_zero_predictions() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let dets = dir.path().join("detections.jsonl");
    let header = std::fs::read_to_string(&dets)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, format!("{header}\n")).unwrap();
    let o = disbeanet(
        dir.path(),
        &["track-predict", "--detections", empty.to_str().unwrap()],
    );
    assert_exit(&o, 0);
    let text = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert_eq!(text.trim_end(), "t,track_id,distance_nm,bearing_deg");
}

fn truth_as_predictions(dir: &Path, t_shift: f64) -> PathBuf {
    let mut rdr = csv::Reader::from_path(dir.join("truth.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (t, d, b) = (col("t"), col("distance_nm"), col("bearing_deg"));
    let mut out = String::from("t,track_id,distance_nm,bearing_deg\n");
    for r in rdr.records() {
        let r = r.unwrap();
        let ts: f64 = r[t].parse().unwrap();
        out.push_str(&format!("{},0,{},{}\n", ts + t_shift, &r[d], &r[b]));
    }
    let path = dir.join("perfect.csv");
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn perfect_predictions_evaluate_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let perfect = truth_as_predictions(dir.path(), 0.0);
    let o = disbeanet(
        dir.path(),
        &["eval", "--predictions", perfect.to_str().unwrap()],
    );
    assert_exit(&o, 0);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    for k in [
        "rmse_distance_nm",
        "rmse_bearing_deg",
        "rmse_lat_deg",
        "rmse_lon_deg",
    ] {
        assert!(report[k].as_f64().unwrap() < 1e-9, "{k} = {}", report[k]);
    }
}

#[test]
fn misaligned_timestamps_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario();
    assert_exit(
        &disbeanet(dir.path(), &["synth", "--scenario", scen.to_str().unwrap()]),
        0,
    );
    let shifted = truth_as_predictions(dir.path(), 10_000.0);
    for cmd in ["eval", "georef"] {
        let o = disbeanet(
            dir.path(),
            &[cmd, "--predictions", shifted.to_str().unwrap()],
        );
        assert_exit(&o, 2);
    }
}

#[test]
fn fixed_camera_georef_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    std::fs::write(
        &preds,
        "t,track_id,distance_nm,bearing_deg\n0.0,3,60.0,0.0\n",
    )
    .unwrap();
    let o = disbeanet(
        dir.path(),
        &[
            "georef",
            "--predictions",
            preds.to_str().unwrap(),
            "--camera-lat",
            "0",
            "--camera-lon",
            "0",
        ],
    );
    assert_exit(&o, 0);
    let geo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("tracks.geojson")).unwrap()).unwrap();
    let c = &geo["features"][0]["geometry"]["coordinates"];
    assert!((c[1].as_f64().unwrap() - 0.999_326_108_891_82).abs() < 1e-12);
    assert_eq!(geo["features"][0]["properties"]["track_id"], 3);

    let o = disbeanet(
        dir.path(),
        &["georef", "--predictions", preds.to_str().unwrap()],
    );
    assert_exit(&o, 2);
}
