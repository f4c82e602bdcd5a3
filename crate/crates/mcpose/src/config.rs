//! Engine settings as read from a JSON config file and overridden by flags.

use std::path::PathBuf;

use mcpose_core::particle::{Diffusion, EngineConfig, OrientationInit, RotationNoise};
use mcpose_core::scoring::{InlierMode, InlierParams, Quantize, WeightCoeffs};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum InlierModeArg {
    #[serde(rename = "1d")]
    #[value(name = "1d")]
    Depth1d,
    #[serde(rename = "3d")]
    #[value(name = "3d")]
    Euclidean3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum QuantizeArg {
    Off,
    Mm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RotationNoiseArg {
    Euler,
    Tangent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OrientationInitArg {
    Euler,
    Haar,
}

/// Every engine knob, flat. Missing fields take the engine defaults. The
/// worker count is accepted on input but never echoed into result files,
/// since results do not depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub samples: usize,
    #[serde(skip_serializing)]
    pub workers: usize,
    pub raster_cores: usize,
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
    pub rotation_noise: RotationNoiseArg,
    pub orientation_init: OrientationInitArg,
    /// Per-iteration diffusion decay; `null` disables annealing.
    pub anneal: Option<f64>,
    pub tau: f64,
    pub max_iterations: usize,
    pub top_percent: f64,
    pub cdf_bins: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub inlier_mode: InlierModeArg,
    pub quantize: QuantizeArg,
    pub culling: bool,
    pub seed: u64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self::from_config(&EngineConfig::default())
    }
}

impl EngineSettings {
    pub fn from_config(c: &EngineConfig) -> Self {
        Self {
            samples: c.n_samples,
            workers: c.n_workers,
            raster_cores: c.raster_cores,
            sigma_translation: c.diffusion.sigma_translation,
            sigma_rotation: c.diffusion.sigma_rotation,
            rotation_noise: match c.diffusion.rotation_noise {
                RotationNoise::Euler => RotationNoiseArg::Euler,
                RotationNoise::Tangent => RotationNoiseArg::Tangent,
            },
            orientation_init: match c.orientation_init {
                OrientationInit::EulerUniform => OrientationInitArg::Euler,
                OrientationInit::Haar => OrientationInitArg::Haar,
            },
            anneal: c.anneal,
            tau: c.convergence_tau,
            max_iterations: c.max_iterations,
            top_percent: c.top_percent,
            cdf_bins: c.cdf_bins,
            alpha: c.coeffs.alpha,
            beta: c.coeffs.beta,
            gamma: c.coeffs.gamma,
            epsilon: c.inlier.epsilon,
            inlier_mode: match c.inlier.mode {
                InlierMode::Depth1d => InlierModeArg::Depth1d,
                InlierMode::Euclidean3d => InlierModeArg::Euclidean3d,
            },
            quantize: match c.inlier.quantize {
                Quantize::Off => QuantizeArg::Off,
                Quantize::FixedPointMm => QuantizeArg::Mm,
            },
            culling: c.culling,
            seed: c.seed,
        }
    }

    /// Validated engine configuration.
    pub fn to_config(&self) -> CliResult<EngineConfig> {
        let inlier = InlierParams::new(
            self.epsilon,
            match self.inlier_mode {
                InlierModeArg::Depth1d => InlierMode::Depth1d,
                InlierModeArg::Euclidean3d => InlierMode::Euclidean3d,
            },
            match self.quantize {
                QuantizeArg::Off => Quantize::Off,
                QuantizeArg::Mm => Quantize::FixedPointMm,
            },
        )?;
        let cfg = EngineConfig {
            n_samples: self.samples,
            n_workers: self.workers,
            raster_cores: self.raster_cores,
            diffusion: Diffusion {
                sigma_translation: self.sigma_translation,
                sigma_rotation: self.sigma_rotation,
                rotation_noise: match self.rotation_noise {
                    RotationNoiseArg::Euler => RotationNoise::Euler,
                    RotationNoiseArg::Tangent => RotationNoise::Tangent,
                },
            },
            orientation_init: match self.orientation_init {
                OrientationInitArg::Euler => OrientationInit::EulerUniform,
                OrientationInitArg::Haar => OrientationInit::Haar,
            },
            anneal: self.anneal,
            convergence_tau: self.tau,
            max_iterations: self.max_iterations,
            top_percent: self.top_percent,
            cdf_bins: self.cdf_bins,
            coeffs: WeightCoeffs::new(self.alpha, self.beta, self.gamma)?,
            inlier,
            culling: self.culling,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::read(path, e))
    }
}

/// Flag overrides layered on top of a config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct EngineArgs {
    /// JSON file with engine settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of samples M.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Worker threads for scoring.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Inlier threshold in meters.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Convergence threshold on the mean sample weight.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compare depths as 16-bit millimeters.
    #[arg(long, value_enum)]
    pub quantize: Option<QuantizeArg>,
    #[arg(long, value_enum)]
    pub inlier_mode: Option<InlierModeArg>,
    /// Skip back-facing triangles.
    #[arg(long)]
    pub culling: Option<bool>,
    /// Resample only from this top percentage of samples.
    #[arg(long)]
    pub top_percent: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Per-iteration diffusion decay factor in (0, 1]; 1 keeps it constant.
    #[arg(long)]
    pub anneal: Option<f64>,
    /// Write one JSON line per iteration to <out>/trace.jsonl.
    #[arg(long)]
    pub trace: bool,
}

impl EngineArgs {
    pub fn settings(&self) -> CliResult<EngineSettings> {
        let mut s = match &self.config {
            Some(p) => EngineSettings::load(p)?,
            None => EngineSettings::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { s.$target = v; })*
            };
        }
        set!(samples => samples, workers => workers, epsilon => epsilon, tau => tau, seed => seed,
            quantize => quantize, inlier_mode => inlier_mode, culling => culling,
            top_percent => top_percent, max_iterations => max_iterations);
        if let Some(a) = self.anneal {
            s.anneal = Some(a);
        }
        Ok(s)
    }
}

/// Everything one estimate or bench run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub settings: EngineSettings,
    pub engine: EngineConfig,
    /// Directory holding `scene.json`, `depth.pgm` and `detections.json`.
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub trace: bool,
}

impl RunConfig {
    pub fn new(args: &EngineArgs, scene_dir: PathBuf, out_dir: PathBuf) -> CliResult<Self> {
        let settings = args.settings()?;
        let engine = settings.to_config()?;
        for name in [crate::formats::SCENE_FILE, crate::formats::DEPTH_FILE, crate::formats::DETECTIONS_FILE] {
            let p = scene_dir.join(name);
            if !p.is_file() {
                return Err(CliError::invalid(format!("{}: missing input file", p.display())));
            }
        }
        Ok(Self { settings, engine, scene_dir, out_dir, trace: args.trace })
    }
}
