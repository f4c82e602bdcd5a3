//! JSON and CSV documents exchanged by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use mcpose_core::memory::LedgerCounters;
use mcpose_core::obj::load_mesh;
use mcpose_core::particle::{Detection, EstimateResult, IterationStats, Sample};
use mcpose_core::primitives::Primitive;
use mcpose_core::scene::{NoiseModel, Scene, SceneObject};
use mcpose_core::{BoundingBox, CameraIntrinsics, Pose6DoF, RasterStats, TriangleMesh};
use serde::{Deserialize, Serialize};

use crate::config::EngineSettings;
use crate::error::{at_path, CliError, CliResult};

pub const SCENE_FILE: &str = "scene.json";
pub const DEPTH_FILE: &str = "depth.pgm";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const TIMING_FILE: &str = "timing.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const BENCH_CSV: &str = "bench.csv";

/// Prefix for meshes generated in memory instead of loaded from a file.
pub const BUILTIN: &str = "builtin:";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraJson {
    fn default() -> Self {
        let k = CameraIntrinsics::kinect();
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

impl CameraJson {
    pub fn intrinsics(&self) -> mcpose_core::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectJson {
    /// `builtin:<name>` or an OBJ path, relative to the scene file.
    pub mesh: String,
    /// `[x, y, z, roll, pitch, yaw]`, meters and radians.
    pub pose: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Selects ADD-S over ADD in evaluation. Built-in meshes know their own
    /// symmetry; file meshes default to asymmetric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseJson {
    pub sigma_m: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub camera: CameraJson,
    pub objects: Vec<ObjectJson>,
    #[serde(default)]
    pub noise: NoiseJson,
    #[serde(default)]
    pub seed: u64,
}

/// A scene file with its meshes resolved.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    /// The document with labels filled in and file meshes made absolute,
    /// so it can be copied elsewhere unchanged.
    pub file: SceneFile,
    pub scene: Scene,
    pub meshes: Vec<TriangleMesh>,
    pub symmetric: Vec<bool>,
}

impl LoadedScene {
    pub fn object_index(&self, label: &str) -> Option<usize> {
        self.scene.objects.iter().position(|o| o.label == label)
    }
}

/// Loads a mesh reference. Returns the mesh, its canonical reference and
/// whether it is known to be symmetric.
pub fn resolve_mesh(reference: &str, base: &Path) -> CliResult<(TriangleMesh, String, bool)> {
    if let Some(name) = reference.strip_prefix(BUILTIN) {
        let p = Primitive::from_name(name).ok_or_else(|| {
            let known: Vec<_> = Primitive::ALL.iter().map(|p| p.name()).collect();
            CliError::invalid(format!("unknown built-in mesh '{name}' (known: {})", known.join(", ")))
        })?;
        return Ok((p.mesh(), reference.to_string(), p.symmetric()));
    }
    let path = base.join(reference);
    let bytes = fs::read(&path).map_err(|e| CliError::read(&path, e))?;
    let mesh = load_mesh(&bytes).map_err(|e| at_path(&path, e))?;
    let canonical = fs::canonicalize(&path).unwrap_or(path);
    Ok((mesh, canonical.display().to_string(), false))
}

fn mesh_stem(reference: &str) -> String {
    match reference.strip_prefix(BUILTIN) {
        Some(name) => name.to_string(),
        None => Path::new(reference).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into()),
    }
}

pub fn parse_scene(text: &str, base: &Path) -> CliResult<LoadedScene> {
    let mut file: SceneFile = serde_json::from_str(text).map_err(|e| CliError::invalid(format!("scene: {e}")))?;
    let camera = file.camera.intrinsics()?;
    let mut meshes = Vec::new();
    let mut symmetric = Vec::new();
    let mut objects = Vec::new();
    for (i, o) in file.objects.iter_mut().enumerate() {
        let (mesh, reference, sym) = resolve_mesh(&o.mesh, base)?;
        let label = o.label.clone().unwrap_or_else(|| format!("{}_{i}", mesh_stem(&o.mesh)));
        if objects.iter().any(|x: &SceneObject| x.label == label) {
            return Err(CliError::invalid(format!("duplicate object label '{label}'")));
        }
        let pose = Pose6DoF::from_array(o.pose)?;
        o.mesh = reference;
        o.label = Some(label.clone());
        symmetric.push(o.symmetric.unwrap_or(sym));
        objects.push(SceneObject { mesh: meshes.len(), label, pose });
        meshes.push(mesh);
    }
    let scene = Scene {
        camera,
        objects,
        noise: NoiseModel { sigma_m: file.noise.sigma_m, dropout: file.noise.dropout },
        seed: file.seed,
    };
    scene.validate(meshes.len())?;
    Ok(LoadedScene { file, scene, meshes, symmetric })
}

/// Reads a scene file; a directory means its `scene.json`.
pub fn load_scene(path: &Path) -> CliResult<LoadedScene> {
    let path = if path.is_dir() { path.join(SCENE_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scene(&text, &base).map_err(|e| match e {
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionJson {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub confidence: f64,
}

impl From<&Detection> for DetectionJson {
    fn from(d: &Detection) -> Self {
        Self { label: d.label.clone(), bbox: d.bbox.to_array(), confidence: d.confidence }
    }
}

impl DetectionJson {
    pub fn to_detection(&self, k: &CameraIntrinsics) -> CliResult<Detection> {
        let [x0, y0, x1, y1] = self.bbox;
        let bbox = BoundingBox::new(x0, y0, x1, y1)?;
        bbox.check_fits(k.width, k.height)?;
        Ok(Detection::new(self.label.clone(), bbox, self.confidence)?)
    }
}

pub fn load_detections(path: &Path, k: &CameraIntrinsics) -> CliResult<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let raw: Vec<DetectionJson> = serde_json::from_str(&text).map_err(|e| CliError::read(path, e))?;
    raw.iter().map(|d| d.to_detection(k).map_err(|e| CliError::read(path, e))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerJson {
    pub naive_depth_reads: u64,
    pub shared_depth_reads: u64,
    pub cdf_coarse_reads: u64,
    pub cdf_fine_reads: u64,
    pub cdf_naive_reads: u64,
}

impl From<LedgerCounters> for LedgerJson {
    fn from(c: LedgerCounters) -> Self {
        Self {
            naive_depth_reads: c.naive_depth_reads,
            shared_depth_reads: c.shared_depth_reads,
            cdf_coarse_reads: c.cdf_coarse_reads,
            cdf_fine_reads: c.cdf_fine_reads,
            cdf_naive_reads: c.cdf_naive_reads,
        }
    }
}

impl From<LedgerJson> for LedgerCounters {
    fn from(c: LedgerJson) -> Self {
        Self {
            naive_depth_reads: c.naive_depth_reads,
            shared_depth_reads: c.shared_depth_reads,
            cdf_coarse_reads: c.cdf_coarse_reads,
            cdf_fine_reads: c.cdf_fine_reads,
            cdf_naive_reads: c.cdf_naive_reads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RasterJson {
    pub triangles_in: u64,
    pub triangles_culled: u64,
    pub triangles_clipped: u64,
    pub triangles_degenerate: u64,
    pub pixels_written: u64,
}

impl From<RasterStats> for RasterJson {
    fn from(r: RasterStats) -> Self {
        Self {
            triangles_in: r.triangles_in,
            triangles_culled: r.triangles_culled,
            triangles_clipped: r.triangles_clipped,
            triangles_degenerate: r.triangles_degenerate,
            pixels_written: r.pixels_written,
        }
    }
}

/// One object's result in `estimates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub label: String,
    pub mesh: String,
    pub pose: [f64; 6],
    pub weight: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ledger: LedgerJson,
}

/// `estimates.json`: deterministic for fixed inputs and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub seed: u64,
    pub config: EngineSettings,
    pub objects: Vec<ObjectEstimate>,
}

pub fn load_estimates(path: &Path) -> CliResult<EstimateFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::read(path, e))
}

/// Per-iteration statistics without wall times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationJson {
    pub iteration: usize,
    pub mean_weight: f64,
    pub max_weight: f64,
    pub inliers: u64,
    pub observed: u64,
    pub rendered: u64,
    pub clamped: u64,
    pub uniform_fallback: bool,
    pub raster: RasterJson,
    pub reads: LedgerJson,
    pub ledger: LedgerJson,
}

impl From<&IterationStats> for IterationJson {
    fn from(s: &IterationStats) -> Self {
        Self {
            iteration: s.iteration,
            mean_weight: s.mean_weight,
            max_weight: s.max_weight,
            inliers: s.inliers,
            observed: s.observed,
            rendered: s.rendered,
            clamped: s.clamped,
            uniform_fallback: s.uniform_fallback,
            raster: s.raster.into(),
            reads: s.reads.into(),
            ledger: s.ledger.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleJson {
    pub pose: [f64; 6],
    pub weight: f64,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub inliers: u64,
    pub observed: u64,
    pub rendered: u64,
}

impl From<&Sample> for SampleJson {
    fn from(s: &Sample) -> Self {
        Self {
            pose: s.pose.to_array(),
            weight: s.weight,
            bbox: s.bbox.to_array(),
            inliers: s.score.n_inlier,
            observed: s.score.n_observed,
            rendered: s.score.n_rendered,
        }
    }
}

/// A complete inference result minus timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResultJson {
    pub best_pose: [f64; 6],
    pub best_weight: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub per_iteration_stats: Vec<IterationJson>,
    pub ledger: LedgerJson,
    pub ledger_snapshots: Vec<LedgerJson>,
    pub final_samples: Vec<SampleJson>,
}

impl From<&EstimateResult> for EstimateResultJson {
    fn from(r: &EstimateResult) -> Self {
        Self {
            best_pose: r.best_pose.to_array(),
            best_weight: r.best_weight,
            iterations_run: r.iterations_run,
            converged: r.converged,
            per_iteration_stats: r.per_iteration_stats.iter().map(Into::into).collect(),
            ledger: r.ledger.counters().into(),
            ledger_snapshots: r.ledger.snapshots().iter().map(|&c| c.into()).collect(),
            final_samples: r.final_samples.iter().map(Into::into).collect(),
        }
    }
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub label: String,
    #[serde(flatten)]
    pub stats: IterationJson,
    pub score_s: f64,
    pub resample_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTiming {
    pub label: String,
    pub wall_s: f64,
    pub score_s: f64,
    pub resample_s: f64,
}

/// `timing.json`: wall times, kept apart from the deterministic results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub workers: usize,
    pub total_s: f64,
    pub objects: Vec<ObjectTiming>,
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run: String,
    pub label: String,
    pub seed: u64,
    pub symmetric: bool,
    pub add: f64,
    pub adds: f64,
    pub error: f64,
    pub success: bool,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: Option<f64>,
    pub naive_depth_reads: u64,
    pub shared_depth_reads: u64,
    pub cdf_coarse_reads: u64,
    pub cdf_fine_reads: u64,
    pub cdf_naive_reads: u64,
}

/// `eval_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub runs: usize,
    pub threshold_m: f64,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_error_m: f64,
    pub median_iterations: f64,
    pub converged_fraction: f64,
}

/// One row of `bench.csv`: means over the repetitions that reached this
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub iteration: usize,
    pub runs: usize,
    pub iteration_s: f64,
    pub score_s: f64,
    pub resample_s: f64,
    pub mean_weight: f64,
    pub naive_depth_reads: f64,
    pub shared_depth_reads: f64,
    pub sharing_ratio: f64,
    pub cdf_coarse_reads: f64,
    pub cdf_fine_reads: f64,
    pub cdf_naive_reads: f64,
    pub triangles_in: f64,
    pub triangles_culled: f64,
}

/// Writes rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::write(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_defaults_and_labels() {
        let s = parse_scene(
            r#"{"objects":[{"mesh":"builtin:can","pose":[0,0,0.8,0,0,0]},{"mesh":"builtin:l_shape","pose":[0.1,0,0.9,0,0,0],"label":"ell"}]}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(s.scene.camera, CameraIntrinsics::kinect());
        assert_eq!(s.scene.objects[0].label, "can_0");
        assert_eq!(s.scene.objects[1].label, "ell");
        assert_eq!(s.symmetric, vec![true, false]);
        assert_eq!(s.object_index("ell"), Some(1));
    }

    #[test]
    fn scene_errors_are_input_errors() {
        let bad = [
            r#"{"objects":[{"mesh":"builtin:teapot","pose":[0,0,1,0,0,0]}]}"#,
            r#"{"objects":[{"mesh":"missing.obj","pose":[0,0,1,0,0,0]}]}"#,
            r#"{"objects":[]}"#,
            r#"{"objects":[{"mesh":"builtin:box","pose":[0,0,1,0,0]}]}"#,
            r#"{"objects":[{"mesh":"builtin:box","pose":[0,0,1,0,0,0]}],"noise":{"dropout":1.0}}"#,
        ];
        for text in bad {
            let e = parse_scene(text, Path::new("/nonexistent")).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
        let e = parse_scene(r#"{"objects":[{"mesh":"missing.obj","pose":[0,0,1,0,0,0]}]}"#, Path::new("/x")).unwrap_err();
        assert!(e.to_string().contains("missing.obj"));
    }

    #[test]
    fn detection_json_shape() {
        let d: Vec<DetectionJson> = serde_json::from_str(r#"[{"label":"a","box":[1,2,30,40],"confidence":0.9}]"#).unwrap();
        let det = d[0].to_detection(&CameraIntrinsics::kinect()).unwrap();
        assert_eq!(det.bbox.to_array(), [1, 2, 30, 40]);
        let back = serde_json::to_value(DetectionJson::from(&det)).unwrap();
        assert_eq!(back["box"], serde_json::json!([1, 2, 30, 40]));
        let outside = DetectionJson { label: "a".into(), bbox: [0, 0, 700, 10], confidence: 0.5 };
        assert!(outside.to_detection(&CameraIntrinsics::kinect()).is_err());
    }
}
