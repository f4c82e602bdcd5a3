//! The four subcommands as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mcpose_core::eval::{add_metric, adds_metric, EvalReport, RunRecord};
use mcpose_core::particle::{Engine, EstimateResult, IterationStats};
use mcpose_core::scene::{render_scene_detailed, stub_detect};

use crate::config::RunConfig;
use crate::depth_io::{load_depth, save_depth, sidecar_path};
use crate::error::{CliError, CliResult};
use crate::exec::{Parallel, WallClock};
use crate::formats::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    /// Maximum per-edge jitter of the stub detections, in pixels.
    pub jitter: u32,
    /// Detection confidences are drawn uniformly from this range.
    pub confidence: (f64, f64),
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { jitter: 5, confidence: (0.8, 1.0) }
    }
}

/// Renders a scene file into `out`: depth image, sidecar, resolved scene
/// and stub detections. Returns the written paths.
pub fn generate(scene_path: &Path, out: &Path, opts: &GenerateOptions) -> CliResult<Vec<PathBuf>> {
    let loaded = load_scene(scene_path)?;
    let rendered = render_scene_detailed(&loaded.scene, &loaded.meshes)?;
    let detections = stub_detect(&loaded.scene, &rendered, opts.jitter, opts.confidence)?;
    ensure_dir(out)?;
    let depth = out.join(DEPTH_FILE);
    save_depth(&depth, &rendered.image)?;
    let scene = out.join(SCENE_FILE);
    write_json(&scene, &loaded.file)?;
    let dets = out.join(DETECTIONS_FILE);
    write_json(&dets, &detections.iter().map(DetectionJson::from).collect::<Vec<_>>())?;
    Ok(vec![sidecar_path(&depth), depth, scene, dets])
}

/// Result of one object's inference together with its wall time.
#[derive(Debug, Clone)]
pub struct ObjectRun {
    pub label: String,
    pub mesh: String,
    pub result: EstimateResult,
    pub wall_s: f64,
}

/// Runs inference for every detection in series, in file order. `observe`
/// sees each iteration as it completes.
pub fn run_objects(
    run: &RunConfig,
    seed: u64,
    mut observe: impl FnMut(&str, &IterationStats),
) -> CliResult<Vec<ObjectRun>> {
    let loaded = load_scene(&run.scene_dir)?;
    let obs = load_depth(&run.scene_dir.join(DEPTH_FILE))?;
    if obs.intrinsics() != &loaded.scene.camera {
        log::warn!("depth sidecar intrinsics differ from the scene camera; using the sidecar");
    }
    let detections = load_detections(&run.scene_dir.join(DETECTIONS_FILE), obs.intrinsics())?;
    let mut cfg = run.engine.clone();
    cfg.seed = seed;
    let mut out = Vec::with_capacity(detections.len());
    for det in &detections {
        let index = loaded
            .object_index(&det.label)
            .ok_or_else(|| CliError::invalid(format!("detection '{}' matches no scene object", det.label)))?;
        let mesh = &loaded.meshes[loaded.scene.objects[index].mesh];
        let exec = Parallel::new(cfg.n_workers).map_err(|e| CliError::runtime(e.to_string()))?;
        let mut engine = Engine::new(cfg.clone(), exec)?.with_clock(WallClock::new());
        let start = Instant::now();
        let label = det.label.clone();
        let mut observer = |s: &IterationStats| observe(&label, s);
        let result = engine
            .run_observed(det, mesh, &obs, &mut observer)
            .map_err(|e| CliError::runtime(format!("object '{}': {e}", det.label)))?;
        log::info!(
            "{}: weight {:.3} after {} iterations (converged: {})",
            det.label,
            result.best_weight,
            result.iterations_run,
            result.converged
        );
        out.push(ObjectRun {
            label: det.label.clone(),
            mesh: loaded.file.objects[index].mesh.clone(),
            result,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

pub fn estimate_file(run: &RunConfig, runs: &[ObjectRun]) -> EstimateFile {
    EstimateFile {
        seed: run.engine.seed,
        config: run.settings.clone(),
        objects: runs
            .iter()
            .map(|r| ObjectEstimate {
                label: r.label.clone(),
                mesh: r.mesh.clone(),
                pose: r.result.best_pose.to_array(),
                weight: r.result.best_weight,
                iterations: r.result.iterations_run,
                converged: r.result.converged,
                ledger: r.result.ledger.counters().into(),
            })
            .collect(),
    }
}

/// Estimates every detected object and writes `estimates.json`,
/// `timing.json` and, when tracing, `trace.jsonl` into the output directory.
pub fn estimate(run: &RunConfig) -> CliResult<EstimateFile> {
    ensure_dir(&run.out_dir)?;
    let start = Instant::now();
    let mut trace = Vec::new();
    let runs = run_objects(run, run.engine.seed, |label, s| {
        if run.trace {
            let line = TraceLine { label: label.to_string(), stats: s.into(), score_s: s.times.score_s, resample_s: s.times.resample_s };
            trace.push(serde_json::to_string(&line).expect("plain struct"));
        }
    })?;
    if run.trace {
        let path = run.out_dir.join(TRACE_FILE);
        let mut f = fs::File::create(&path).map_err(|e| CliError::write(&path, e))?;
        for line in &trace {
            writeln!(f, "{line}").map_err(|e| CliError::write(&path, e))?;
        }
    }
    let file = estimate_file(run, &runs);
    write_json(&run.out_dir.join(ESTIMATES_FILE), &file)?;
    let timing = TimingFile {
        workers: run.engine.n_workers,
        total_s: start.elapsed().as_secs_f64(),
        objects: runs
            .iter()
            .map(|r| ObjectTiming {
                label: r.label.clone(),
                wall_s: r.wall_s,
                score_s: r.result.per_iteration_stats.iter().map(|s| s.times.score_s).sum(),
                resample_s: r.result.per_iteration_stats.iter().map(|s| s.times.resample_s).sum(),
            })
            .collect(),
    };
    write_json(&run.out_dir.join(TIMING_FILE), &timing)?;
    Ok(file)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Scores estimate files against a ground-truth scene. Writes `eval.csv`
/// (one row per object per estimate file) and `eval_summary.json`.
pub fn eval(scene: &Path, estimates: &[PathBuf], out: &Path, threshold: f64) -> CliResult<EvalSummary> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(CliError::invalid("threshold must be positive"));
    }
    let truth = load_scene(scene)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for path in estimates {
        let est = load_estimates(path)?;
        let timing: Option<TimingFile> = path
            .parent()
            .map(|d| d.join(TIMING_FILE))
            .and_then(|t| fs::read_to_string(t).ok())
            .and_then(|s| serde_json::from_str(&s).ok());
        for o in &est.objects {
            let i = truth
                .object_index(&o.label)
                .ok_or_else(|| CliError::invalid(format!("{}: '{}' is not in the scene", path.display(), o.label)))?;
            let gt = &truth.scene.objects[i];
            let mesh = &truth.meshes[gt.mesh];
            let pose = mcpose_core::Pose6DoF::from_array(o.pose).map_err(|e| CliError::read(path, e))?;
            let wall = timing.as_ref().and_then(|t| t.objects.iter().find(|x| x.label == o.label)).map(|x| x.wall_s);
            let rec = RunRecord {
                object: o.label.clone(),
                seed: est.seed,
                symmetric: truth.symmetric[i],
                add: add_metric(mesh, &pose, &gt.pose),
                adds: adds_metric(mesh, &pose, &gt.pose),
                iterations: o.iterations,
                converged: o.converged,
                wall_time_s: wall,
                ledger: o.ledger.into(),
            };
            rows.push(EvalRow {
                run: path.display().to_string(),
                label: rec.object.clone(),
                seed: rec.seed,
                symmetric: rec.symmetric,
                add: rec.add,
                adds: rec.adds,
                error: rec.error(),
                success: rec.error() < threshold,
                iterations: rec.iterations,
                converged: rec.converged,
                wall_time_s: rec.wall_time_s,
                naive_depth_reads: o.ledger.naive_depth_reads,
                shared_depth_reads: o.ledger.shared_depth_reads,
                cdf_coarse_reads: o.ledger.cdf_coarse_reads,
                cdf_fine_reads: o.ledger.cdf_fine_reads,
                cdf_naive_reads: o.ledger.cdf_naive_reads,
            });
            records.push(rec);
        }
    }
    let report = EvalReport::new(records, threshold).ok_or_else(|| CliError::invalid("no estimates to evaluate"))?;
    let n = report.records.len();
    let summary = EvalSummary {
        runs: n,
        threshold_m: threshold,
        successes: rows.iter().filter(|r| r.success).count(),
        success_rate: report.success_rate,
        mean_error_m: report.records.iter().map(|r| r.error()).sum::<f64>() / n as f64,
        median_iterations: median(report.records.iter().map(|r| r.iterations as f64).collect()),
        converged_fraction: report.records.iter().filter(|r| r.converged).count() as f64 / n as f64,
    };
    ensure_dir(out)?;
    write_csv(&out.join(EVAL_CSV), &rows)?;
    write_json(&out.join(EVAL_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Default)]
struct BenchAcc {
    runs: usize,
    score_s: f64,
    resample_s: f64,
    mean_weight: f64,
    naive: f64,
    shared: f64,
    coarse: f64,
    fine: f64,
    cdf_naive: f64,
    tri_in: f64,
    tri_culled: f64,
}

/// Repeats estimation with seeds `seed, seed+1, ...` and writes per-iteration
/// means to `bench.csv`.
pub fn bench(run: &RunConfig, repetitions: usize) -> CliResult<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(CliError::invalid("repetitions must be >= 1"));
    }
    let mut acc: BTreeMap<(String, usize), BenchAcc> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for rep in 0..repetitions {
        let seed = run.engine.seed.wrapping_add(rep as u64);
        run_objects(run, seed, |label, s| {
            if !order.iter().any(|l| l == label) {
                order.push(label.to_string());
            }
            let a = acc.entry((label.to_string(), s.iteration)).or_default();
            a.runs += 1;
            a.score_s += s.times.score_s;
            a.resample_s += s.times.resample_s;
            a.mean_weight += s.mean_weight;
            a.naive += s.reads.naive_depth_reads as f64;
            a.shared += s.reads.shared_depth_reads as f64;
            a.coarse += s.reads.cdf_coarse_reads as f64;
            a.fine += s.reads.cdf_fine_reads as f64;
            a.cdf_naive += s.reads.cdf_naive_reads as f64;
            a.tri_in += s.raster.triangles_in as f64;
            a.tri_culled += s.raster.triangles_culled as f64;
        })?;
    }
    let mut rows = Vec::new();
    for label in &order {
        for ((_, iteration), a) in acc.range((label.clone(), 0)..=(label.clone(), usize::MAX)) {
            let n = a.runs as f64;
            rows.push(BenchRow {
                label: label.clone(),
                iteration: *iteration,
                runs: a.runs,
                iteration_s: (a.score_s + a.resample_s) / n,
                score_s: a.score_s / n,
                resample_s: a.resample_s / n,
                mean_weight: a.mean_weight / n,
                naive_depth_reads: a.naive / n,
                shared_depth_reads: a.shared / n,
                sharing_ratio: if a.naive > 0.0 { a.shared / a.naive } else { 1.0 },
                cdf_coarse_reads: a.coarse / n,
                cdf_fine_reads: a.fine / n,
                cdf_naive_reads: a.cdf_naive / n,
                triangles_in: a.tri_in / n,
                triangles_culled: a.tri_culled / n,
            });
        }
    }
    ensure_dir(&run.out_dir)?;
    write_csv(&run.out_dir.join(BENCH_CSV), &rows)?;
    Ok(rows)
}
