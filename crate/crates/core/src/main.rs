use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use misgan_lab::config::Task;
use misgan_lab::run::{run_file, RunOptions};

/// Missing-data GAN laboratory.
#[derive(Debug, Parser)]
#[command(name = "misgan-lab", version)]
struct Cli {
    #[arg(value_enum)]
    task: Task,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train a stand-alone imputer against the G_x of this checkpoint.
    #[arg(long)]
    frozen_gx: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let opts = RunOptions {
        force: cli.force,
        seed: cli.seed,
        frozen_gx: cli.frozen_gx,
    };
    match run_file(cli.task, &cli.config, &opts) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
