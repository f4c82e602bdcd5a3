use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcpose::formats::{load_estimates, EstimateFile, EvalSummary, SceneFile};
use serde_json::Value;
use tempfile::TempDir;

const SCENE: &str = r#"{
  "objects": [
    {"mesh": "builtin:box", "pose": [-0.08, 0.0, 0.75, 0.3, -0.2, 0.5]},
    {"mesh": "builtin:sphere", "pose": [0.09, 0.02, 0.8, 0.0, 0.0, 0.0]}
  ],
  "noise": {"sigma_m": 0.002, "dropout": 0.05},
  "seed": 42
}"#;

fn mcpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcpose")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the scene file and runs `generate` into `<tmp>/<name>`.
fn generated(tmp: &TempDir, name: &str, scene: &str) -> PathBuf {
    let file = tmp.path().join(format!("{name}.json"));
    fs::write(&file, scene).unwrap();
    let dir = tmp.path().join(name);
    let o = mcpose(&["generate", s(&file), "--out", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn estimate(dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["estimate", s(dir), "--out", s(out), "--samples", "40", "--max-iterations", "3", "--seed", "7"];
    args.extend_from_slice(extra);
    mcpose(&args)
}

#[test]
fn generate_writes_all_files_deterministically() {
    let tmp = TempDir::new().unwrap();
    let a = generated(&tmp, "a", SCENE);
    let b = generated(&tmp, "b", SCENE);
    for f in ["depth.pgm", "depth.json", "scene.json", "detections.json"] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        if f != "scene.json" {
            assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
        }
    }
    let sidecar: Value = serde_json::from_slice(&fs::read(a.join("depth.json")).unwrap()).unwrap();
    assert_eq!(sidecar["width"], 640);
    assert_eq!(sidecar["depth_scale_mm"].as_f64(), Some(1.0));
    let dets: Value = serde_json::from_slice(&fs::read(a.join("detections.json")).unwrap()).unwrap();
    assert_eq!(dets.as_array().unwrap().len(), 2);
    assert!(dets[0]["box"].as_array().unwrap().len() == 4);
    let scene: SceneFile = serde_json::from_slice(&fs::read(a.join("scene.json")).unwrap()).unwrap();
    assert_eq!(scene.objects[0].label.as_deref(), Some("box_0"));
}

#[test]
fn seed_changes_the_noise() {
    let tmp = TempDir::new().unwrap();
    let a = generated(&tmp, "a", SCENE);
    let b = generated(&tmp, "b", &SCENE.replace("\"seed\": 42", "\"seed\": 43"));
    assert_ne!(fs::read(a.join("depth.pgm")).unwrap(), fs::read(b.join("depth.pgm")).unwrap());
}

#[test]
fn missing_mesh_is_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("scene.json");
    fs::write(&file, SCENE.replace("builtin:box", "no_such_mesh.obj")).unwrap();
    let o = mcpose(&["generate", s(&file), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_mesh.obj"), "{}", stderr(&o));
}

#[test]
fn malformed_scene_is_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("scene.json");
    fs::write(&file, r#"{"objects": [{"mesh": "builtin:box", "pose": [0, 0, 0.8]}]}"#).unwrap();
    let o = mcpose(&["generate", s(&file), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_scene_dir_is_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let o = estimate(&tmp.path().join("nowhere"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_values_are_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("out");
    assert_eq!(estimate(&dir, &out, &["--epsilon", "0"]).status.code(), Some(2));
    assert_eq!(estimate(&dir, &out, &["--top-percent", "0"]).status.code(), Some(2));
    assert_eq!(estimate(&dir, &out, &["--inlier-mode", "2d"]).status.code(), Some(2));
}

#[test]
fn tau_zero_stops_after_one_iteration() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("out");
    let o = estimate(&dir, &out, &["--tau", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let est = load_estimates(&out.join("estimates.json")).unwrap();
    assert_eq!(est.objects.len(), 2);
    assert!(est.objects.iter().all(|o| o.iterations == 1 && o.converged));
    assert!(out.join("timing.json").exists());
    assert!(!out.join("trace.jsonl").exists());
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let mut outputs = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join(format!("out{w}"));
        let o = estimate(&dir, &out, &["--workers", w]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("estimates.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn trace_has_one_line_per_iteration() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("out");
    let o = estimate(&dir, &out, &["--trace", "--tau", "1.01", "--quantize", "mm", "--inlier-mode", "3d"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2 * 3);
    assert_eq!(lines[0]["label"], "box_0");
    assert_eq!(lines[2]["iteration"], 2);
}

#[test]
fn config_file_and_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let cfg = tmp.path().join("engine.json");
    fs::write(&cfg, r#"{"samples": 30, "max_iterations": 2, "tau": 1.01}"#).unwrap();
    let out = tmp.path().join("out");
    let o = mcpose(&["estimate", s(&dir), "--out", s(&out), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let est = load_estimates(&out.join("estimates.json")).unwrap();
    assert_eq!(est.config.samples, 30);
    assert!(est.objects.iter().all(|o| o.iterations == 2));

    fs::write(&cfg, r#"{"sample_count": 30}"#).unwrap();
    let o = mcpose(&["estimate", s(&dir), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_scores_perfect_and_real_estimates() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("est");
    assert!(estimate(&dir, &out, &[]).status.success());

    // Ground-truth poses in place of the estimates.
    let scene: SceneFile = serde_json::from_slice(&fs::read(dir.join("scene.json")).unwrap()).unwrap();
    let mut perfect: EstimateFile = load_estimates(&out.join("estimates.json")).unwrap();
    for (o, truth) in perfect.objects.iter_mut().zip(&scene.objects) {
        o.pose = truth.pose;
    }
    let perfect_path = tmp.path().join("perfect.json");
    fs::write(&perfect_path, serde_json::to_vec(&perfect).unwrap()).unwrap();

    let eval_dir = tmp.path().join("eval");
    let o = mcpose(&["eval", s(&dir), "--estimates", s(&perfect_path), s(&out.join("estimates.json")), "--out", s(&eval_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: EvalSummary = serde_json::from_slice(&fs::read(eval_dir.join("eval_summary.json")).unwrap()).unwrap();
    assert_eq!(summary.runs, 4);
    assert!(summary.successes >= 2);

    let mut rows = csv::Reader::from_path(eval_dir.join("eval.csv")).unwrap();
    let rows: Vec<mcpose::formats::EvalRow> = rows.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows[..2] {
        assert!(r.error < 1e-12 && r.success);
        assert!(r.adds <= r.add + 1e-12);
    }

    let only_perfect = tmp.path().join("eval2");
    let o = mcpose(&["eval", s(&dir), "--estimates", s(&perfect_path), "--out", s(&only_perfect)]);
    assert!(o.status.success());
    let summary: EvalSummary = serde_json::from_slice(&fs::read(only_perfect.join("eval_summary.json")).unwrap()).unwrap();
    assert_eq!(summary.success_rate, 1.0);
}

#[test]
fn eval_rejects_empty_estimates() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("est");
    assert!(estimate(&dir, &out, &[]).status.success());
    let mut empty = load_estimates(&out.join("estimates.json")).unwrap();
    empty.objects.clear();
    let path = tmp.path().join("empty.json");
    fs::write(&path, serde_json::to_vec(&empty).unwrap()).unwrap();
    let o = mcpose(&["eval", s(&dir), "--estimates", s(&path), "--out", s(&tmp.path().join("eval"))]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn bench_writes_one_row_per_iteration() {
    let tmp = TempDir::new().unwrap();
    let dir = generated(&tmp, "scene", SCENE);
    let out = tmp.path().join("bench");
    let o = mcpose(&[
        "bench", s(&dir), "--out", s(&out), "--repetitions", "1", "--samples", "40", "--max-iterations", "4", "--tau", "1.01",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    let rows: Vec<mcpose::formats::BenchRow> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 4);
    for r in &rows {
        assert_eq!(r.runs, 1);
        assert!(r.shared_depth_reads <= r.naive_depth_reads);
        assert!(r.sharing_ratio > 0.0 && r.sharing_ratio <= 1.0);
    }
}

#[test]
fn depth_round_trip_and_size_mismatch() {
    use mcpose::depth_io::{load_depth, save_depth};
    use mcpose_core::{CameraIntrinsics, DepthImage};
    let tmp = TempDir::new().unwrap();
    let k = CameraIntrinsics::new(500.0, 500.0, 15.5, 11.5, 32, 24).unwrap();
    let depths: Vec<f64> = (0..32 * 24).map(|i| if i % 5 == 0 { 0.0 } else { 0.4 + i as f64 * 0.001 }).collect();
    let path = tmp.path().join("d.pgm");
    save_depth(&path, &DepthImage::new(k, depths.clone()).unwrap()).unwrap();
    let back = load_depth(&path).unwrap();
    assert_eq!(back.intrinsics(), &k);
    for (a, b) in depths.iter().zip(back.depths()) {
        assert!((a - b).abs() <= 0.0005 + 1e-12);
    }

    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).unwrap().replace("\"width\": 32", "\"width\": 33").replace("\"width\":32", "\"width\":33");
    fs::write(&side, text).unwrap();
    let err = load_depth(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
