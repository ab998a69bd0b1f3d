use clap::{Parser, Subcommand};
use posechain_cli::commands;

/// Robot-mounted camera dataset pipeline: synthesis, kinematics, hand-eye
/// calibration, view planning, manifest export and render evaluation.
#[derive(Parser)]
#[command(name = "posechain", version)]
struct Cli {
    /// Print a machine-readable JSON report instead of the human summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Synth(commands::SynthArgs),
    Fk(commands::FkArgs),
    Calibrate(commands::CalibrateArgs),
    Plan(commands::PlanArgs),
    ExportManifest(commands::ExportManifestArgs),
    EvalTraj(commands::EvalTrajArgs),
    EvalImages(commands::EvalImagesArgs),
    Ensemble(commands::EnsembleArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args, cli.json),
        Command::Fk(args) => commands::cmd_fk(args, cli.json),
        Command::Calibrate(args) => commands::cmd_calibrate(args, cli.json),
        Command::Plan(args) => commands::cmd_plan(args, cli.json),
        Command::ExportManifest(args) => commands::cmd_export_manifest(args, cli.json),
        Command::EvalTraj(args) => commands::cmd_eval_traj(args, cli.json),
        Command::EvalImages(args) => commands::cmd_eval_images(args, cli.json),
        Command::Ensemble(args) => commands::cmd_ensemble(args, cli.json),
    };
    if let Err(error) = result {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}
