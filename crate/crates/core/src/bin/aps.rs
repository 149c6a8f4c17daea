use std::path::PathBuf;
use std::process::ExitCode;

use aps_core::image::Image;
use aps_core::inference::{localize, ModelBundle};
use aps_core::orchestration::{run_all, run_stage, ExperimentConfig, Stage, StageOutcome};
use aps_core::Result;
use clap::{Args, Parser, Subcommand};

/// Synthetic multi-modal indoor camera positioning pipeline.
#[derive(Parser)]
#[command(name = "aps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render worlds, trajectories and paired images.
    Generate(RunArgs),
    /// Brightness and mask augmentation, splits and normalization.
    Augment(RunArgs),
    TrainClassifier(RunArgs),
    TrainGan(RunArgs),
    PretrainBranches(RunArgs),
    TrainFused(RunArgs),
    /// Classifier, loss and error tables, confusion matrix and the inference bundle.
    Evaluate(RunArgs),
    /// Occluded test renders and the disruption table.
    Disruption(RunArgs),
    /// Comparison tables and plots.
    Report(RunArgs),
    /// Every stage in order.
    All(RunArgs),
    /// Localize one image with a saved bundle.
    Infer(InferArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Offset for every training and initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun even when the stage is up to date.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Config override, e.g. `--set training.fused.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Print a single JSON line instead of text.
    #[arg(long)]
    json: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.output_dir {
            overrides.push(format!("output_dir={}", toml_string(&d.to_string_lossy())));
        }
        ExperimentConfig::load_with_overrides(&self.config, &overrides)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(args: &RunArgs, stage: Option<Stage>) -> Result<()> {
    let cfg = args.config()?;
    let results = match stage {
        Some(s) => vec![(s, run_stage(&cfg, s, args.force)?)],
        None => run_all(&cfg, args.force)?,
    };
    for (s, outcome) in results {
        let status = match outcome {
            StageOutcome::Ran => "done",
            StageOutcome::UpToDate => "up to date",
        };
        println!("{s}: {status}");
    }
    Ok(())
}

fn infer(args: &InferArgs) -> Result<()> {
    let bundle = ModelBundle::load(&args.bundle)?;
    let image = Image::load_png(&args.image)?;
    let r = localize(&image, &bundle)?;
    if args.json {
        println!("{}", r.to_json_line());
    } else {
        let [x, y, z] = r.position;
        let [qw, qx, qy, qz] = r.quaternion;
        println!(
            "scene {} (confidence {:.3}{})",
            r.scene_id,
            r.confidence,
            if r.low_confidence { ", low" } else { "" }
        );
        println!("position  {x:.4} {y:.4} {z:.4}");
        println!("rotation  {qw:.6} {qx:.6} {qy:.6} {qz:.6}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => run(a, Some(Stage::Generate)),
        Command::Augment(a) => run(a, Some(Stage::Augment)),
        Command::TrainClassifier(a) => run(a, Some(Stage::TrainClassifier)),
        Command::TrainGan(a) => run(a, Some(Stage::TrainGan)),
        Command::PretrainBranches(a) => run(a, Some(Stage::PretrainBranches)),
        Command::TrainFused(a) => run(a, Some(Stage::TrainFused)),
        Command::Evaluate(a) => run(a, Some(Stage::Evaluate)),
        Command::Disruption(a) => run(a, Some(Stage::Disruption)),
        Command::Report(a) => run(a, Some(Stage::Report)),
        Command::All(a) => run(a, None),
        Command::Infer(a) => infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
