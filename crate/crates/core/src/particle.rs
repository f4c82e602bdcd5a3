//! The Monte-Carlo inference loop.
//!
//! Samples are scored by rendering their pose into their own bounding box and
//! comparing against the observation; the weight merger turns scores into
//! weights; the resampler sorts sample indices by weight, builds a CDF over the
//! top fraction and draws new indices with a two-level (threshold bin, then
//! linear) search; the diffuser perturbs each drawn pose and writes it into
//! the opposite bank of a ping-pong buffer. Iteration stops once the mean
//! weight exceeds the convergence threshold.
//!
//! All randomness comes from [`crate::rng::stream`] keyed by sample and
//! iteration, and scoring is a pure per-sample map, so the result is the same
//! for every [`Executor`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use crate::math::{Mat3, Vec3};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{back_project, CameraIntrinsics, Pose6DoF, TriangleMesh};
use crate::memory::{account_iteration, plan_distribution, AccessLedger, LedgerCounters};
use crate::raster::{projected_box, BoundingBox, RasterStats, Rasterizer};
use crate::rng::{stream, Purpose};
use crate::scene::DepthImage;
use crate::scoring::{compute_weight, raw_weight, InlierParams, InlierScore, ScoreAccumulator, WeightCoeffs};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(label: impl Into<String>, bbox: BoundingBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfig(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self { label: label.into(), bbox, confidence })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub pose: Pose6DoF,
    pub weight: f64,
    pub bbox: BoundingBox,
    pub score: InlierScore,
}

/// How rotational noise enters a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationNoise {
    /// Independent Gaussian noise on roll, pitch and yaw.
    #[default]
    Euler,
    /// A Gaussian rotation vector in the camera frame, composed on the left.
    /// Isotropic on the rotation group, so it behaves the same near gimbal
    /// lock as anywhere else.
    Tangent,
}

/// How initial orientations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrientationInit {
    /// Each Euler angle uniform on (-pi, pi].
    #[default]
    EulerUniform,
    /// Uniform on the rotation group (random unit quaternion).
    Haar,
}

/// Standard deviations of the diffusion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffusion {
    /// Meters, applied to x, y and z.
    pub sigma_translation: f64,
    /// Radians, per Euler angle or per rotation-vector component.
    pub sigma_rotation: f64,
    pub rotation_noise: RotationNoise,
}

impl Default for Diffusion {
    fn default() -> Self {
        Self { sigma_translation: 0.02, sigma_rotation: 0.05, rotation_noise: RotationNoise::Euler }
    }
}

impl Diffusion {
    pub fn scaled(&self, f: f64) -> Diffusion {
        Diffusion { sigma_translation: self.sigma_translation * f, sigma_rotation: self.sigma_rotation * f, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub n_samples: usize,
    /// Upper bound on concurrent scoring workers.
    pub n_workers: usize,
    /// Group size of the modeled depth distributor: samples are scored in
    /// rounds of this many, each round reading its boxes together.
    pub raster_cores: usize,
    pub diffusion: Diffusion,
    pub orientation_init: OrientationInit,
    /// When set, diffusion is multiplied by `factor^iteration`.
    pub anneal: Option<f64>,
    pub convergence_tau: f64,
    pub max_iterations: usize,
    /// Resample only from this top percentage of the sorted samples.
    pub top_percent: f64,
    pub cdf_bins: usize,
    pub coeffs: WeightCoeffs,
    pub inlier: InlierParams,
    pub culling: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_samples: 620,
            n_workers: 20,
            raster_cores: 20,
            diffusion: Diffusion::default(),
            orientation_init: OrientationInit::default(),
            anneal: Some(0.92),
            convergence_tau: 0.65,
            max_iterations: 50,
            top_percent: 20.0,
            cdf_bins: 64,
            coeffs: WeightCoeffs::default(),
            inlier: InlierParams::default(),
            culling: true,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1");
        }
        if self.n_workers == 0 || self.raster_cores == 0 {
            return bad("n_workers and raster_cores must be >= 1");
        }
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return bad("top_percent must lie in (0, 100]");
        }
        if self.cdf_bins == 0 {
            return bad("cdf_bins must be >= 1");
        }
        let d = &self.diffusion;
        if !(d.sigma_translation >= 0.0 && d.sigma_rotation >= 0.0 && d.sigma_translation.is_finite() && d.sigma_rotation.is_finite()) {
            return bad("diffusion sigmas must be finite and >= 0");
        }
        if let Some(a) = self.anneal {
            if !(a > 0.0 && a <= 1.0) {
                return bad("anneal factor must lie in (0, 1]");
            }
        }
        if !self.convergence_tau.is_finite() {
            return bad("convergence_tau must be finite");
        }
        self.coeffs.validate()?;
        self.inlier.validate()
    }

    fn diffusion_at(&self, iteration: usize) -> Diffusion {
        match self.anneal {
            Some(f) => self.diffusion.scaled(libm::pow(f, iteration as f64)),
            None => self.diffusion,
        }
    }
}

/// Runs an indexed map, possibly in parallel. Implementations must return
/// results in index order; each worker gets its own scratch state.
pub trait Executor {
    fn map_with<S, T, I, F>(&self, n: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send;
}

/// Single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_with<S, T, I, F>(&self, n: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        let mut state = init();
        (0..n).map(|i| f(&mut state, i)).collect()
    }
}

/// Monotonic seconds, for per-stage timing.
pub trait Clock {
    fn seconds(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

fn uniform_angle<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-PI..PI)
}

/// Shoemake's subgroup algorithm for a uniform unit quaternion.
fn uniform_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = (libm::sqrt(1.0 - u1), libm::sqrt(u1));
    let (s2, c2) = libm::sincos(2.0 * PI * u2);
    let (s3, c3) = libm::sincos(2.0 * PI * u3);
    Mat3::from_quaternion(b * c3, a * s2, a * c2, b * s3)
}

/// Initial belief: translations back-projected from pixels drawn uniformly in
/// the detection box at depths drawn uniformly over the observed depth range
/// in the box widened by 10 cm, orientations uniform per Euler angle.
pub fn initialize_samples(det: &Detection, obs: &DepthImage, cfg: &EngineConfig) -> Result<Vec<Sample>> {
    const DEPTH_MARGIN: f64 = 0.10;
    if cfg.n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
    }
    let k = obs.intrinsics();
    let region = obs.region(det.bbox)?;
    let (lo, hi) = region.depth_range().ok_or(Error::NoValidDepth)?;
    let z_lo = (lo - DEPTH_MARGIN).max(0.05);
    let z_hi = hi + DEPTH_MARGIN;
    let b = det.bbox;
    let weight = 1.0 / cfg.n_samples as f64;
    (0..cfg.n_samples)
        .map(|i| {
            let mut rng = stream(cfg.seed, Purpose::Init, 0, i as u64);
            let u = rng.random_range(b.x_min as f64..=b.x_max as f64);
            let v = rng.random_range(b.y_min as f64..=b.y_max as f64);
            let z = rng.random_range(z_lo..=z_hi);
            let p = back_project(k, u, v, z)?;
            let pose = match cfg.orientation_init {
                OrientationInit::EulerUniform => {
                    Pose6DoF::new(p.x, p.y, p.z, uniform_angle(&mut rng), uniform_angle(&mut rng), uniform_angle(&mut rng))?
                }
                OrientationInit::Haar => Pose6DoF::from_rotation(p, &uniform_rotation(&mut rng))?,
            };
            Ok(Sample { pose, weight, bbox: det.bbox, score: InlierScore::default() })
        })
        .collect()
}

/// Everything a scoring worker reads.
#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    pub mesh: &'a TriangleMesh,
    pub observation: &'a DepthImage,
    pub confidence: f64,
    pub inlier: InlierParams,
    pub coeffs: WeightCoeffs,
    pub culling: bool,
    pub raster_cores: usize,
}

impl<'a> ScoringContext<'a> {
    pub fn new(mesh: &'a TriangleMesh, observation: &'a DepthImage, confidence: f64, cfg: &EngineConfig) -> Self {
        Self {
            mesh,
            observation,
            confidence,
            inlier: cfg.inlier,
            coeffs: cfg.coeffs,
            culling: cfg.culling,
            raster_cores: cfg.raster_cores,
        }
    }

    /// Renders and scores one pose over `bbox` with the fused
    /// rasterize-and-compare path.
    pub fn score_one(&self, raster: &mut Rasterizer, pose: &Pose6DoF, bbox: &BoundingBox) -> (InlierScore, RasterStats) {
        let region = self.observation.region(*bbox).expect("sample boxes are clamped to the image");
        let mut acc = ScoreAccumulator::new(&region, self.inlier);
        let stats = raster.rasterize(
            self.mesh,
            &pose.to_transform(),
            self.observation.intrinsics(),
            bbox,
            self.culling,
            |x, y, z| acc.push(x, y, z),
        );
        (acc.finish(), stats)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreReport {
    pub raster: RasterStats,
    pub ledger: LedgerCounters,
    /// Samples whose unclamped weight exceeded 1.
    pub clamped: u64,
}

/// Scores every sample in place. Depth reads are charged to the distributor
/// model in rounds of `raster_cores` consecutive samples.
pub fn score_all<E: Executor>(samples: &mut [Sample], ctx: &ScoringContext<'_>, exec: &E) -> ScoreReport {
    let results = {
        let view: &[Sample] = samples;
        exec.map_with(view.len(), Rasterizer::new, |raster, i| ctx.score_one(raster, &view[i].pose, &view[i].bbox))
    };
    let mut report = ScoreReport::default();
    for (s, (score, stats)) in samples.iter_mut().zip(results) {
        s.score = score;
        if raw_weight(&score, ctx.confidence, &ctx.coeffs) > 1.0 {
            report.clamped += 1;
        }
        s.weight = compute_weight(&score, ctx.confidence, &ctx.coeffs);
        report.raster.merge(&stats);
    }
    let mut ledger = AccessLedger::new();
    for round in samples.chunks(ctx.raster_cores.max(1)) {
        let boxes: Vec<BoundingBox> = round.iter().map(|s| s.bbox).collect();
        account_iteration(&plan_distribution(&boxes), &mut ledger);
    }
    report.ledger = ledger.counters();
    report
}

/// Indices ordered by descending weight; ties keep ascending index.
pub fn sort_indices(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

/// Cumulative distribution over the top samples with a coarse lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfIndex {
    cdf: Vec<f64>,
    /// `n_bins + 1` evenly spaced values from 0 to 1.
    thresholds: Vec<f64>,
    /// First CDF position whose value exceeds the bin's lower threshold.
    bin_start: Vec<usize>,
    /// Sample index for each CDF position.
    members: Vec<usize>,
    uniform_fallback: bool,
}

impl CdfIndex {
    /// Builds the CDF over the first `ceil(top_percent% * M)` entries of
    /// `order`. Falls back to a uniform CDF if their total weight is not
    /// positive.
    pub fn build(weights: &[f64], order: &[usize], top_percent: f64, n_bins: usize) -> CdfIndex {
        assert!(!order.is_empty(), "cannot build a CDF over zero samples");
        assert!(n_bins >= 1);
        let m = order.len();
        let keep = (libm::ceil(top_percent * m as f64 / 100.0 - 1e-9) as usize).clamp(1, m);
        let members: Vec<usize> = order[..keep].to_vec();
        let mut cdf = Vec::with_capacity(keep);
        let mut acc = 0.0;
        for &i in &members {
            acc += weights[i].max(0.0);
            cdf.push(acc);
        }
        let uniform_fallback = !(acc > 0.0 && acc.is_finite());
        if uniform_fallback {
            log::warn!("all resampling weights are zero; falling back to a uniform CDF");
            for (i, c) in cdf.iter_mut().enumerate() {
                *c = (i + 1) as f64 / keep as f64;
            }
        } else {
            for c in cdf.iter_mut() {
                *c /= acc;
            }
        }
        cdf[keep - 1] = 1.0;

        let thresholds: Vec<f64> = (0..=n_bins).map(|j| j as f64 / n_bins as f64).collect();
        let mut bin_start = Vec::with_capacity(n_bins);
        let mut pos = 0;
        for &t in &thresholds[..n_bins] {
            while pos < keep - 1 && cdf[pos] <= t {
                pos += 1;
            }
            bin_start.push(pos);
        }
        CdfIndex { cdf, thresholds, bin_start, members, uniform_fallback }
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn bin_start(&self) -> &[usize] {
        &self.bin_start
    }

    /// Sample index stored at CDF position `pos`.
    pub fn member(&self, pos: usize) -> usize {
        self.members[pos]
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn uniform_fallback(&self) -> bool {
        self.uniform_fallback
    }

    fn bin_of(&self, r: f64) -> usize {
        let n = self.bin_start.len();
        let mut j = ((r * n as f64) as usize).min(n - 1);
        while j > 0 && self.thresholds[j] > r {
            j -= 1;
        }
        while j + 1 < n && self.thresholds[j + 1] <= r {
            j += 1;
        }
        j
    }
}

pub fn build_cdf(samples: &[Sample], order: &[usize], top_percent: f64, n_bins: usize) -> CdfIndex {
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    CdfIndex::build(&weights, order, top_percent, n_bins)
}

/// Reference search: first position with `r < cdf[i]`, scanning from 0.
pub fn linear_search(cdf: &[f64], r: f64) -> usize {
    cdf.iter().position(|&c| r < c).unwrap_or(cdf.len() - 1)
}

/// First CDF position `i` with `r < cdf[i]`, found by a threshold-bin lookup
/// followed by a linear scan inside the bin. Charges one coarse read, the fine
/// reads performed, and `i + 1` reads a plain scan would have made.
pub fn resample_index(idx: &CdfIndex, r: f64, ledger: &mut AccessLedger) -> usize {
    let j = idx.bin_of(r);
    let mut fine = 0;
    let mut i = idx.bin_start[j];
    loop {
        fine += 1;
        if r < idx.cdf[i] || i + 1 == idx.cdf.len() {
            break;
        }
        i += 1;
    }
    ledger.record_cdf_search(1, fine, i as u64 + 1);
    i
}

/// Adds zero-mean Gaussian noise: per component for translation, and per
/// Euler angle or as a left-composed rotation vector for orientation.
pub fn diffuse<R: Rng>(pose: &Pose6DoF, d: &Diffusion, rng: &mut R) -> Pose6DoF {
    let mut draw = |sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
        }
    };
    let [x, y, z, roll, pitch, yaw] = pose.to_array();
    let (t, r) = (d.sigma_translation, d.sigma_rotation);
    let (dx, dy, dz) = (draw(t), draw(t), draw(t));
    let (dr, dp, dw) = (draw(r), draw(r), draw(r));
    match d.rotation_noise {
        RotationNoise::Euler => Pose6DoF::new(x + dx, y + dy, z + dz, roll + dr, pitch + dp, yaw + dw),
        RotationNoise::Tangent => {
            let rot = Mat3::from_rotation_vector(Vec3::new(dr, dp, dw)) * pose.rotation();
            Pose6DoF::from_rotation(Vec3::new(x + dx, y + dy, z + dz), &rot)
        }
    }
    .unwrap_or(*pose)
}

/// Two sample banks used alternately as source and destination.
#[derive(Debug, Clone)]
pub struct PingPong {
    banks: [Vec<Sample>; 2],
    active: usize,
}

impl PingPong {
    pub fn new(samples: Vec<Sample>) -> Self {
        let spare = samples.clone();
        Self { banks: [samples, spare], active: 0 }
    }

    /// Which bank currently holds the live samples.
    pub fn active_bank(&self) -> usize {
        self.active
    }

    pub fn samples(&self) -> &[Sample] {
        &self.banks[self.active]
    }

    pub fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.banks[self.active]
    }

    pub fn into_samples(self) -> Vec<Sample> {
        let [a, b] = self.banks;
        if self.active == 0 { a } else { b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleReport {
    /// Source sample index for each new sample.
    pub selected: Vec<usize>,
    pub uniform_fallback: bool,
}

/// Geometry needed to recompute sample boxes after diffusion.
#[derive(Debug, Clone, Copy)]
pub struct ResampleContext<'a> {
    pub mesh: &'a TriangleMesh,
    pub intrinsics: &'a CameraIntrinsics,
}

/// Draws a new sample set from the live bank into the other bank and flips
/// them. New weights are uniform and boxes follow each diffused hypothesis.
pub fn resample_and_diffuse(
    buffers: &mut PingPong,
    ctx: &ResampleContext<'_>,
    cfg: &EngineConfig,
    iteration: usize,
    ledger: &mut AccessLedger,
) -> ResampleReport {
    let src = buffers.active;
    let dst = 1 - src;
    let m = buffers.banks[src].len();
    let weights: Vec<f64> = buffers.banks[src].iter().map(|s| s.weight).collect();
    let order = sort_indices(&weights);
    let idx = CdfIndex::build(&weights, &order, cfg.top_percent, cfg.cdf_bins);
    let diffusion = cfg.diffusion_at(iteration);
    let uniform = 1.0 / m as f64;

    let [a, b] = &mut buffers.banks;
    let (from, to) = if src == 0 { (&*a, b) } else { (&*b, a) };
    to.clear();
    let mut selected = Vec::with_capacity(m);
    for i in 0..m {
        let r: f64 = stream(cfg.seed, Purpose::Resample, iteration as u64, i as u64).random();
        let chosen = idx.member(resample_index(&idx, r, ledger));
        let parent = &from[chosen];
        let mut rng = stream(cfg.seed, Purpose::Diffuse, iteration as u64, i as u64);
        let pose = diffuse(&parent.pose, &diffusion, &mut rng);
        let bbox = projected_box(ctx.mesh, &pose.to_transform(), ctx.intrinsics).unwrap_or(parent.bbox);
        to.push(Sample { pose, weight: uniform, bbox, score: InlierScore::default() });
        selected.push(chosen);
    }
    buffers.active = dst;
    ResampleReport { selected, uniform_fallback: idx.uniform_fallback() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub score_s: f64,
    pub resample_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_weight: f64,
    pub max_weight: f64,
    pub inliers: u64,
    pub observed: u64,
    pub rendered: u64,
    pub clamped: u64,
    pub uniform_fallback: bool,
    pub raster: RasterStats,
    /// Reads charged during this iteration.
    pub reads: LedgerCounters,
    /// Cumulative ledger totals at the end of this iteration.
    pub ledger: LedgerCounters,
    pub times: StageTimes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub best_pose: Pose6DoF,
    pub best_weight: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub per_iteration_stats: Vec<IterationStats>,
    pub ledger: AccessLedger,
    pub final_samples: Vec<Sample>,
}

/// Hooks for an inference run. All have no-op defaults.
pub trait Observer {
    fn iteration(&mut self, _stats: &IterationStats) {}
}

impl Observer for () {}

impl<F: FnMut(&IterationStats)> Observer for F {
    fn iteration(&mut self, stats: &IterationStats) {
        self(stats)
    }
}

/// One engine instance runs one inference at a time.
#[derive(Debug, Clone)]
pub struct Engine<E, C = NoClock> {
    pub config: EngineConfig,
    executor: E,
    clock: C,
}

impl<E: Executor> Engine<E, NoClock> {
    pub fn new(config: EngineConfig, executor: E) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, executor, clock: NoClock })
    }
}

impl<E: Executor, C: Clock> Engine<E, C> {
    pub fn with_clock<C2: Clock>(self, clock: C2) -> Engine<E, C2> {
        Engine { config: self.config, executor: self.executor, clock }
    }

    pub fn run(&mut self, det: &Detection, mesh: &TriangleMesh, obs: &DepthImage) -> Result<EstimateResult> {
        self.run_observed(det, mesh, obs, &mut ())
    }

    pub fn run_observed<O: Observer>(
        &mut self,
        det: &Detection,
        mesh: &TriangleMesh,
        obs: &DepthImage,
        observer: &mut O,
    ) -> Result<EstimateResult> {
        let cfg = &self.config;
        let mut buffers = PingPong::new(initialize_samples(det, obs, cfg)?);
        let scoring = ScoringContext::new(mesh, obs, det.confidence, cfg);
        let resampling = ResampleContext { mesh, intrinsics: obs.intrinsics() };
        let mut ledger = AccessLedger::new();
        let mut stats = Vec::new();
        let mut converged = false;
        let mut uniform_fallback = false;

        for iteration in 0..cfg.max_iterations {
            let before = ledger.counters();
            let t0 = self.clock.seconds();
            let report = score_all(buffers.samples_mut(), &scoring, &self.executor);
            ledger.absorb(&report.ledger);
            let t1 = self.clock.seconds();

            let samples = buffers.samples();
            let n = samples.len() as f64;
            let mean_weight = samples.iter().map(|s| s.weight).sum::<f64>() / n;
            let max_weight = samples.iter().map(|s| s.weight).fold(f64::NEG_INFINITY, f64::max);
            converged = mean_weight > cfg.convergence_tau;
            let last = converged || iteration + 1 == cfg.max_iterations;

            let mut resample_s = 0.0;
            let totals_before_resample = (
                samples.iter().map(|s| s.score.n_inlier).sum(),
                samples.iter().map(|s| s.score.n_observed).sum(),
                samples.iter().map(|s| s.score.n_rendered).sum(),
            );
            if !last {
                let r = resample_and_diffuse(&mut buffers, &resampling, cfg, iteration, &mut ledger);
                uniform_fallback = r.uniform_fallback;
                resample_s = self.clock.seconds() - t1;
            }
            let totals = ledger.snapshot();
            let s = IterationStats {
                iteration,
                mean_weight,
                max_weight,
                inliers: totals_before_resample.0,
                observed: totals_before_resample.1,
                rendered: totals_before_resample.2,
                clamped: report.clamped,
                uniform_fallback: !last && uniform_fallback,
                raster: report.raster,
                reads: totals.since(&before),
                ledger: totals,
                times: StageTimes { score_s: t1 - t0, resample_s },
            };
            observer.iteration(&s);
            stats.push(s);
            if last {
                break;
            }
        }

        let final_samples = buffers.into_samples();
        let best = final_samples
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.weight.total_cmp(&b.weight).then(ib.cmp(ia)))
            .map(|(_, s)| *s)
            .ok_or(Error::InvalidConfig("no samples".into()))?;
        Ok(EstimateResult {
            best_pose: best.pose,
            best_weight: best.weight,
            iterations_run: stats.len(),
            converged,
            per_iteration_stats: stats,
            ledger,
            final_samples,
        })
    }
}

/// Single-threaded convenience wrapper around [`Engine`].
pub fn run_inference(det: &Detection, mesh: &TriangleMesh, obs: &DepthImage, cfg: &EngineConfig) -> Result<EstimateResult> {
    Engine::new(cfg.clone(), Sequential)?.run(det, mesh, obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sort_examples() {
        assert_eq!(sort_indices(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(sort_indices(&[0.3; 5]), vec![0, 1, 2, 3, 4]);
        assert_eq!(sort_indices(&[0.2, 0.5, 0.2, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn cdf_examples() {
        let c = CdfIndex::build(&[1.0; 4], &[0, 1, 2, 3], 100.0, 64);
        assert_eq!(c.cdf(), &[0.25, 0.5, 0.75, 1.0]);
        let w = [0.9, 0.1, 0.0, 0.0];
        let c = CdfIndex::build(&w, &sort_indices(&w), 50.0, 64);
        assert_eq!(c.len(), 2);
        assert!((c.cdf()[0] - 0.9).abs() < 1e-15);
        assert_eq!(c.cdf()[1], 1.0);
        assert!(!c.uniform_fallback());
        let z = CdfIndex::build(&[0.0; 4], &[0, 1, 2, 3], 100.0, 8);
        assert!(z.uniform_fallback());
        assert_eq!(z.cdf(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn cdf_table_shape() {
        let c = CdfIndex::build(&[1.0, 2.0, 3.0], &[2, 1, 0], 100.0, 16);
        assert_eq!(c.thresholds().len(), 17);
        assert_eq!(c.thresholds()[0], 0.0);
        assert_eq!(c.thresholds()[16], 1.0);
        assert!(c.thresholds().windows(2).all(|w| w[0] < w[1]));
        assert!(c.cdf().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c.member(0), 2);
    }

    #[test]
    fn resample_index_examples() {
        let mut ledger = AccessLedger::new();
        let c = CdfIndex::build(&[0.0, 0.0, 1.0, 1.0], &[0, 1, 2, 3], 100.0, 4);
        // zero-mass positions come first in this order
        assert_eq!(resample_index(&c, 0.0, &mut ledger), 2);
        let one = CdfIndex::build(&[0.7], &[0], 100.0, 64);
        for r in [0.0, 0.3, 0.999_999] {
            assert_eq!(resample_index(&one, r, &mut ledger), 0);
        }
        let before = ledger.counters();
        let c = CdfIndex::build(&[1.0; 10], &(0..10).collect::<Vec<_>>(), 100.0, 2);
        assert_eq!(resample_index(&c, 0.95, &mut ledger), 9);
        let d = ledger.counters().since(&before);
        assert_eq!(d.cdf_coarse_reads, 1);
        assert_eq!(d.cdf_naive_reads, 10);
        assert_eq!(d.cdf_fine_reads, 5);
    }

    #[test]
    fn zero_diffusion_is_identity() {
        let p = Pose6DoF::new(0.1, -0.2, 0.9, 3.0, -1.0, 0.5).unwrap();
        let mut rng = stream(1, Purpose::Diffuse, 0, 0);
        assert_eq!(diffuse(&p, &Diffusion { sigma_translation: 0.0, sigma_rotation: 0.0, ..Diffusion::default() }, &mut rng), p);
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let mut c = EngineConfig::default();
        c.n_samples = 0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.top_percent = 0.0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.n_workers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn detection_confidence_range() {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        assert!(Detection::new("a", b, 1.2).is_err());
        assert!(Detection::new("a", b, 0.5).is_ok());
    }
    #[test]
    fn diffusion_moments() {
        let d = Diffusion { sigma_translation: 0.02, sigma_rotation: 0.05, ..Diffusion::default() };
        let n = 100_000;
        let mut sum = [0.0f64; 6];
        let mut sq = [0.0f64; 6];
        for i in 0..n {
            let mut rng = stream(5, Purpose::Diffuse, 0, i);
            let p = diffuse(&Pose6DoF::IDENTITY, &d, &mut rng).to_array();
            for c in 0..6 {
                sum[c] += p[c];
                sq[c] += p[c] * p[c];
            }
        }
        for c in 0..6 {
            let sigma = if c < 3 { 0.02 } else { 0.05 };
            let mean = sum[c] / n as f64;
            let var = sq[c] / n as f64 - mean * mean;
            assert!(mean.abs() < 5.0 * sigma / (n as f64).sqrt(), "component {c} mean {mean}");
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "component {c} variance {var}");
        }
    }

    #[test]
    fn tangent_diffusion_is_small_rotation() {
        let d = Diffusion { sigma_translation: 0.0, sigma_rotation: 0.01, rotation_noise: RotationNoise::Tangent };
        let p = Pose6DoF::new(0.0, 0.0, 1.0, 0.3, 1.5, -2.0).unwrap();
        for i in 0..100 {
            let q = diffuse(&p, &d, &mut stream(2, Purpose::Diffuse, 0, i));
            let rel = q.rotation().transpose() * p.rotation();
            let angle = libm::acos(((rel.rows[0][0] + rel.rows[1][1] + rel.rows[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0));
            assert!(angle < 0.1, "angle {angle}");
            assert_eq!(q.translation(), p.translation());
        }
    }

    #[test]
    fn haar_init_covers_rotations() {
        let mut rng = stream(1, Purpose::Init, 0, 0);
        let mut mean_trace = 0.0;
        for _ in 0..20_000 {
            let r = uniform_rotation(&mut rng);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            mean_trace += r.rows[0][0] + r.rows[1][1] + r.rows[2][2];
        }
        // the trace of a uniform rotation has mean 0
        assert!((mean_trace / 20_000.0).abs() < 0.05);
    }

    fn bank(weights: &[f64]) -> Vec<Sample> {
        let b = BoundingBox::new(300, 220, 340, 260).unwrap();
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Sample {
                pose: Pose6DoF::new(0.01 * i as f64, 0.0, 0.8, 0.0, 0.0, 0.0).unwrap(),
                weight: w,
                bbox: b,
                score: InlierScore::default(),
            })
            .collect()
    }

    #[test]
    fn ping_pong_alternates_and_resets_weights() {
        let mesh = crate::primitives::Primitive::Box.mesh();
        let k = CameraIntrinsics::kinect();
        let ctx = ResampleContext { mesh: &mesh, intrinsics: &k };
        let cfg = EngineConfig { n_samples: 8, ..EngineConfig::default() };
        let mut buffers = PingPong::new(bank(&[0.1, 0.9, 0.0, 0.3, 0.2, 0.0, 0.5, 0.4]));
        let mut ledger = AccessLedger::new();
        for it in 0..4 {
            assert_eq!(buffers.active_bank(), it % 2);
            let report = resample_and_diffuse(&mut buffers, &ctx, &cfg, it, &mut ledger);
            assert_eq!(report.selected.len(), 8);
            let total: f64 = buffers.samples().iter().map(|s| s.weight).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(buffers.samples().iter().all(|s| s.weight == 0.125));
        }
        assert_eq!(ledger.counters().cdf_coarse_reads, 32);
    }

    #[test]
    fn top_percent_limits_parents() {
        let mesh = crate::primitives::Primitive::Box.mesh();
        let k = CameraIntrinsics::kinect();
        let ctx = ResampleContext { mesh: &mesh, intrinsics: &k };
        let cfg = EngineConfig { n_samples: 10, top_percent: 20.0, ..EngineConfig::default() };
        let w = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
        let mut buffers = PingPong::new(bank(&w));
        let report = resample_and_diffuse(&mut buffers, &ctx, &cfg, 0, &mut AccessLedger::new());
        assert!(report.selected.iter().all(|&i| i == 8 || i == 9));
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let mesh = crate::primitives::Primitive::Box.mesh();
        let k = CameraIntrinsics::kinect();
        let ctx = ResampleContext { mesh: &mesh, intrinsics: &k };
        let cfg = EngineConfig { n_samples: 6, top_percent: 100.0, ..EngineConfig::default() };
        let mut buffers = PingPong::new(bank(&[0.0; 6]));
        let report = resample_and_diffuse(&mut buffers, &ctx, &cfg, 0, &mut AccessLedger::new());
        assert!(report.uniform_fallback);
        assert_eq!(buffers.samples().len(), 6);
    }
}
