use std::path::PathBuf;
use std::process::ExitCode;

use basestab::cli::{build_job, execute, replay, Overrides};
use basestab::sim::{Profile, Variant};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "basestab", version, about = "Moving-base action stabilization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config for the command.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// baseline, manager, stabilizer_zero, stabilizer_half or full.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = ["paper", "desk"])]
    profile: Option<String>,
    /// Use the learned predictor from this checkpoint.
    #[arg(long)]
    checkpoint: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the motion predictor.
    Train(Common),
    /// Estimate the system latency by the end-hold search.
    Calibrate(Common),
    /// Run one scenario and write its trace.
    Run(Common),
    /// Run the variant matrix.
    Ablation(Common),
    /// End-hold marker histogram.
    Heatmap(Common),
    /// Re-execute a recorded manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> basestab::Result<Vec<String>> {
    let (name, common) = match cli.command {
        Command::Replay { manifest, out } => return Ok(replay(&manifest, &out)?.summary),
        Command::Train(c) => ("train", c),
        Command::Calibrate(c) => ("calibrate", c),
        Command::Run(c) => ("run", c),
        Command::Ablation(c) => ("ablation", c),
        Command::Heatmap(c) => ("heatmap", c),
    };
    let text = common.config.as_ref().map(std::fs::read_to_string).transpose()?;
    let overrides = Overrides {
        seed: common.seed,
        profile: common.profile.as_deref().map(str::parse::<Profile>).transpose()?,
        variant: common.variant,
        trials: common.trials,
        checkpoint: common.checkpoint,
    };
    let job = build_job(name, text.as_deref(), &overrides)?;
    let mut summary = execute(&job, &common.out)?.summary;
    summary.push(format!("manifest: {}", common.out.join(basestab::cli::MANIFEST_FILE).display()));
    Ok(summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
