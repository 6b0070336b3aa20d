use std::path::PathBuf;
use std::process::ExitCode;

use avsplat::trainer::Stage;
use avsplat_cli::commands::{cmd_eval, cmd_fit, cmd_render, cmd_synth, cmd_train};
use avsplat_cli::{CliError, CliResult, Config, EvalSource, RenderOptions, TrainOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avsplat", version, about = "Articulated Gaussian avatars: synthesize, fit, train, render, evaluate")]
struct Cli {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured dataset directory.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view dataset of the built-in teacher avatar.
    Synth,
    /// Fit template shape and pose to target vertices and joints.
    Fit {
        #[arg(long)]
        target: Option<PathBuf>,
        /// Joint term weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Largest accepted vertex RMS (m).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Train an avatar on a dataset.
    Train {
        /// Run only this stage (1 pretrain, 2 joint, 3 face).
        #[arg(long)]
        stage: Option<usize>,
        /// Start from a saved checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Comma-separated training views.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
    },
    /// Render a checkpoint for one pose and camera.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Pose file in dataset format (defaults to the dataset's).
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Camera file in dataset format (defaults to the dataset's).
        #[arg(long)]
        cameras: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or a directory of renders, against a dataset.
    Eval {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Comma-separated views (defaults to the held-out views).
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out = o;
    }
    if let Some(d) = cli.dataset {
        config.dataset = d;
    }
    match cli.command {
        Command::Synth => {
            let (_, data) = cmd_synth(&config, cli.force)?;
            println!(
                "wrote {} frames × {} cameras to {}",
                data.frames(),
                data.cameras.len(),
                config.out.display()
            );
        }
        Command::Fit { target, lambda, tolerance } => {
            if let Some(t) = target {
                config.fit.target = t;
            }
            if let Some(l) = lambda {
                config.fit.lambda = l;
            }
            if let Some(t) = tolerance {
                config.fit.tolerance = t;
            }
            config.validate()?;
            let fit = cmd_fit(&config, cli.force)?;
            println!(
                "vertex RMS {:.3e} m, joint RMS {:.3e} m, {} iterations",
                fit.vertex_rms, fit.joint_rms, fit.iterations
            );
        }
        Command::Train { stage, resume, views } => {
            let stage = stage
                .map(|n| Stage::from_number(n).ok_or_else(|| CliError::Validation(format!("no stage {n} (use 1, 2 or 3)"))))
                .transpose()?;
            let opts = TrainOptions {
                stage,
                resume,
                views,
                force: cli.force,
            };
            let (_, report) = cmd_train(&config, &opts)?;
            let last = report.curve.last().map(|r| r.total).unwrap_or(0.0);
            println!("{} steps, final loss {last:.6}, written to {}", report.curve.len(), config.out.display());
        }
        Command::Render { checkpoint, frame, view, poses, cameras } => {
            let r = cmd_render(
                &config,
                &RenderOptions {
                    checkpoint,
                    frame,
                    view,
                    poses,
                    cameras,
                },
            )?;
            match r.psnr {
                Some(p) => println!("{} (PSNR {p:.2} dB)", r.path.display()),
                None => println!("{}", r.path.display()),
            }
        }
        Command::Eval { checkpoint, predictions, views } => {
            let source = match (checkpoint, predictions) {
                (Some(c), _) => EvalSource::Checkpoint(c),
                (None, Some(p)) => EvalSource::Predictions(p),
                (None, None) => unreachable!("clap requires one source"),
            };
            let report = cmd_eval(&config, &source, views.as_deref(), cli.force)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
