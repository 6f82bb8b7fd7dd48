use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matforge::pipeline::{run_stage, RunOptions};

#[derive(Parser)]
#[command(name = "matforge", version, about = "Multi-view material estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-view feature stacks to stats/<id>/.
    Stats(Common),
    /// Predict per-view material maps into views/<id>/.
    Predict(Common),
    /// Bilateral-smooth specular and roughness into smoothed/<id>/.
    Smooth(Common),
    /// Merge smoothed maps into the UV atlas.
    Bake(Common),
    /// Render the atlas from every input camera into rerender/.
    Rerender(Common),
    /// PSNR of the re-renders against the input images.
    Validate(Common),
    /// Every stage from predict to validate.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Scene config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the predictor seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write feature stacks during predict.
    #[arg(long)]
    dump_stats: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Stats(a) => ("stats", a),
        Command::Predict(a) => ("predict", a),
        Command::Smooth(a) => ("smooth", a),
        Command::Bake(a) => ("bake", a),
        Command::Rerender(a) => ("rerender", a),
        Command::Validate(a) => ("validate", a),
        Command::Pipeline(a) => ("pipeline", a),
    };
    let opts = RunOptions { out: args.out, seed: args.seed, dump_stats: args.dump_stats };
    match run_stage(stage, &args.config, &opts) {
        Ok(report) => {
            for v in &report.views {
                if let Some(p) = v.psnr {
                    println!("view {:03}: psnr {p:.2} dB", v.view_id);
                }
            }
            if let Some(a) = &report.atlas {
                println!("atlas {0}x{0}: coverage {1:.4}", a.resolution, a.coverage);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("matforge: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
