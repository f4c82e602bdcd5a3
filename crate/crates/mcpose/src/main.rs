use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcpose::commands::{self, GenerateOptions};
use mcpose::config::{EngineArgs, RunConfig};
use mcpose::CliResult;

/// Monte-Carlo 6DoF pose estimation from depth images.
#[derive(Debug, Parser)]
#[command(name = "mcpose", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene file into a depth image plus stub detections.
    Generate {
        /// Scene JSON.
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum per-edge detection box jitter in pixels.
        #[arg(long, default_value_t = 5)]
        jitter: u32,
        /// Lower end of the detection confidence range.
        #[arg(long, default_value_t = 0.8)]
        confidence_min: f64,
        /// Upper end of the detection confidence range.
        #[arg(long, default_value_t = 1.0)]
        confidence_max: f64,
    },
    /// Estimate the pose of every detected object.
    Estimate {
        /// Directory written by `generate`.
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Score estimates against the ground truth.
    Eval {
        /// Scene JSON or a directory containing scene.json.
        scene: PathBuf,
        /// One or more estimates.json files.
        #[arg(long, required = true, num_args = 1..)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Success threshold on ADD (asymmetric) or ADD-S (symmetric), meters.
        #[arg(long, default_value_t = 0.04)]
        threshold: f64,
    },
    /// Repeat estimation and report per-iteration timings and counters.
    Bench {
        /// Directory written by `generate`.
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { scene, out, jitter, confidence_min, confidence_max } => {
            let opts = GenerateOptions { jitter, confidence: (confidence_min, confidence_max) };
            for path in commands::generate(&scene, &out, &opts)? {
                println!("{}", path.display());
            }
        }
        Command::Estimate { scene_dir, out, engine } => {
            let run = RunConfig::new(&engine, scene_dir, out)?;
            let file = commands::estimate(&run)?;
            for o in &file.objects {
                let p = o.pose;
                println!(
                    "{}: pose [{:.4}, {:.4}, {:.4}, {:.4}, {:.4}, {:.4}] weight {:.4} iterations {} converged {}",
                    o.label, p[0], p[1], p[2], p[3], p[4], p[5], o.weight, o.iterations, o.converged
                );
            }
        }
        Command::Eval { scene, estimates, out, threshold } => {
            let s = commands::eval(&scene, &estimates, &out, threshold)?;
            println!(
                "{} runs, success rate {:.3} at {} m, mean error {:.4} m, median iterations {}",
                s.runs, s.success_rate, s.threshold_m, s.mean_error_m, s.median_iterations
            );
        }
        Command::Bench { scene_dir, out, repetitions, engine } => {
            let run = RunConfig::new(&engine, scene_dir, out)?;
            let rows = commands::bench(&run, repetitions)?;
            println!("{} rows written to {}", rows.len(), run.out_dir.join(mcpose::formats::BENCH_CSV).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
