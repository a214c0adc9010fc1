use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sanet::cli::{commands, RunConfig};

#[derive(Parser)]
#[command(
    name = "sanet",
    about = "Scene parsing with ConvLSTM multi-layer feature aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key=value configuration file ('#' comments allowed)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; overrides the config's seed key
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Checkpoint path (resume source for train, weights for eval/infer)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory; writes checkpoints and CSV curves
    Train,
    /// Evaluate a checkpoint with multi-scale inference; writes metrics CSV
    Eval,
    /// Label one PPM image; writes a label PGM and a color PPM
    Infer { image: PathBuf },
    /// Train every skip/aux/aggregation variant over the seed list
    Ablate,
    /// Run the finite-difference verification suite
    Gradcheck,
    /// Per-layer compute and parameter accounting for the configured model
    Flops,
    /// Generate a synthetic scene dataset
    Synth,
}

fn load_config(cli: &Cli) -> sanet::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_out(cli: &Cli) -> sanet::Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| sanet::Error::Arg("--out <dir> is required for this command".into()))
}

fn require_checkpoint(cli: &Cli) -> sanet::Result<PathBuf> {
    cli.checkpoint
        .clone()
        .ok_or_else(|| sanet::Error::Arg("--checkpoint <path> is required".into()))
}

fn run(cli: &Cli) -> sanet::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => {
            let out = require_out(cli)?;
            let outcome = commands::cmd_train(&cfg, &out, cli.checkpoint.as_deref())?;
            if let Some(last) = outcome.curve.last() {
                println!(
                    "train: {} steps, final val ce {:.6}, pixel acc {:.4}, mean IoU {:.4}",
                    last.step, last.val_ce, last.val_pixel_acc, last.val_mean_iou
                );
            }
            println!(
                "train: final training-split pixel accuracy {:.4}",
                outcome.final_train_accuracy
            );
            Ok(())
        }
        Command::Eval => {
            let out = require_out(cli)?;
            let ckpt = require_checkpoint(cli)?;
            let report = commands::cmd_eval(&cfg, &ckpt, &out)?;
            println!(
                "eval: pixel accuracy {:.4}, mean IoU {:.4}",
                report.pixel_accuracy, report.mean_iou
            );
            Ok(())
        }
        Command::Infer { image } => {
            let out = require_out(cli)?;
            let ckpt = require_checkpoint(cli)?;
            commands::cmd_infer(&cfg, &ckpt, image, &out)
        }
        Command::Ablate => {
            let out = require_out(cli)?;
            let rows = commands::cmd_ablate(&cfg, &out)?;
            for r in &rows {
                println!(
                    "{},{},{},{}",
                    r.variant, r.seed, r.final_miou, r.epochs_to_threshold
                );
            }
            Ok(())
        }
        Command::Gradcheck => commands::cmd_gradcheck(cfg.seed, cli.out.as_deref()),
        Command::Flops => {
            commands::cmd_flops(&cfg, cli.out.as_deref())?;
            Ok(())
        }
        Command::Synth => {
            let out = require_out(cli)?;
            commands::cmd_synth(&cfg, &out)?;
            println!(
                "synth: wrote {} {}x{} scenes with {} classes to {}",
                cfg.synth_count,
                cfg.synth_height,
                cfg.synth_width,
                cfg.num_classes,
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
