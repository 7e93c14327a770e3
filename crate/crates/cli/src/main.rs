use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use gmpose::pipeline::{run_bench, run_pipeline, PipelineConfig, Status};
use gmpose::submodels::SubmodelScheme;
use gmpose::synth::{generate_scene, load_scene, load_xyz, save_scene, SceneFile, SyntheticScenario};
use gmpose::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "gmpose", version, about = "Two-stage global hypothesis generation for 6D object pose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    Generate {
        /// Scenario TOML; missing keys take their defaults.
        #[arg(long, alias = "scenario")]
        config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline on a scene file and write a JSON report.
    Solve {
        #[arg(long)]
        scene: PathBuf,
        /// Pipeline TOML; missing keys take the published defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Object model as `x y z` lines; overrides the points stored in the scene.
        #[arg(long)]
        object: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<SubmodelScheme>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit timings so repeated runs produce identical bytes.
        #[arg(long)]
        canonical: bool,
    },
    /// Run a randomized verification suite; exits 1 on any failed trial.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate and solve a run of seeded synthetic scenes.
    Bench {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        /// First scene seed; defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheme: Option<SubmodelScheme>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures mapped onto the exit-code contract.
enum Failure {
    Usage(String),
    Internal(String),
}

impl Failure {
    fn usage(e: impl ToString) -> Self {
        Failure::Usage(e.to_string())
    }

    fn internal(e: impl ToString) -> Self {
        Failure::Internal(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::internal(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn scenario(path: Option<&Path>) -> Result<SyntheticScenario, Failure> {
    match path {
        Some(p) => SyntheticScenario::from_toml(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => Ok(SyntheticScenario::default()),
    }
}

fn pipeline_config(path: Option<&Path>, scheme: Option<SubmodelScheme>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_toml(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = scheme {
        cfg.scheme = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut s = scenario(config.as_deref())?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let g = generate_scene(&s).map_err(Failure::internal)?;
            save_scene(&out, &SceneFile::from(&g)).map_err(Failure::internal)?;
            eprintln!("wrote {} ({}x{} nodes, seed {})", out.display(), s.grid_width, s.grid_height, s.seed);
        }
        Command::Solve { scene, config, object, scheme, out, canonical } => {
            let cfg = pipeline_config(config.as_deref(), scheme)?;
            let file = load_scene(&scene).map_err(Failure::usage)?;
            let points = match object {
                Some(p) => Some(load_xyz(&p).map_err(Failure::usage)?),
                None => file.object_points.clone(),
            };
            let observation = Arc::new(file.observation());
            let run = run_pipeline(&observation, points.as_deref(), file.ground_truth.as_ref(), &cfg).map_err(Failure::internal)?;
            let r = &run.report;
            write_output(out.as_deref(), &r.to_json(canonical))?;
            let verdict = match (&r.status, &r.evaluation) {
                (Status::NoDetection, _) => "no-detection".to_string(),
                (Status::Detected, Some(e)) => format!("detected, {}", if e.correct { "correct" } else { "incorrect" }),
                (Status::Detected, None) => "detected".to_string(),
            };
            eprintln!("{verdict}: {} stage-one inliers, {} hypotheses", r.stage_one.inliers, r.hypothesis_count);
        }
        Command::Verify { suite, trials, seed } => {
            let report = run_suite(suite, trials, seed);
            println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::internal)?);
            eprintln!("{suite}: {}/{} passed", report.passed, report.trials);
            if !report.all_passed() {
                return Err(Failure::Internal(format!("{} failed trials", report.failures.len())));
            }
        }
        Command::Bench { scenario: path, config, scenes, seed, scheme, out } => {
            let s = scenario(path.as_deref())?;
            let cfg = pipeline_config(config.as_deref(), scheme)?;
            let report = run_bench(&s, &cfg, scenes, seed.unwrap_or(s.seed)).map_err(Failure::internal)?;
            let mut text = serde_json::to_string_pretty(&report).map_err(Failure::internal)?;
            text.push('\n');
            write_output(out.as_deref(), &text)?;
            eprintln!(
                "{}/{} correct, {} with at most 10 hypotheses, max {:.0} ms per scene",
                report.correct, report.scenes, report.typical_hypothesis_count, report.max_runtime_ms
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
