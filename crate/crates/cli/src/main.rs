use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use p2t_cli::commands::{self, Overrides, CHECKPOINT_FILE};
use p2t_cli::exit_code;
use p2t_core::pointcloud::ExtractionMethod;
use p2t_core::{P2tError, Result};

/// Radar point cloud to dense tensor pipeline.
#[derive(Parser)]
#[command(name = "p2t", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cartesian voxel size in metres; overrides the config.
    #[arg(long, global = true)]
    grid_voxel: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenes into a dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Simulate this scene file instead of random scenes.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Number of random scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Extract point clouds from the polar tensors of a dataset.
    Extract {
        #[arg(long)]
        data: PathBuf,
        /// percentile:P or cfar:K1; repeatable. Defaults to the config's methods.
        #[arg(long)]
        method: Vec<ExtractionMethod>,
    },
    /// Train the generator/discriminator pair on one method's clouds.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: ExtractionMethod,
        #[arg(long)]
        out: PathBuf,
        /// Number of optimizer steps; overrides epochs.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint (or ground truth against itself) on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: ExtractionMethod,
        /// Checkpoint file or training output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score per-method records and print the efficiency table.
    Report {
        /// Record CSV files.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the height-pooled BEV of an RPT1 cube as a PGM image.
    Bev {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// simulate → extract → train → eval → report in one go.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("P2T_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| P2tError::Config(format!("P2T_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| P2tError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let ov = Overrides {
        config: cli.common.config,
        seed: cli.common.seed,
        grid_voxel: cli.common.grid_voxel,
    };
    match cli.command {
        Command::Simulate { out, scene, scenes } => commands::cmd_simulate(&out, &ov, scene.as_deref(), scenes).map(drop),
        Command::Extract { data, method } => commands::cmd_extract(&data, &ov, &method),
        Command::Train { data, method, out, steps } => commands::cmd_train(&data, &ov, method, &out, steps),
        Command::Eval {
            data,
            method,
            checkpoint,
            out,
        } => {
            let ck = checkpoint.map(|p| if p.is_dir() { p.join(CHECKPOINT_FILE) } else { p });
            commands::cmd_eval(&data, &ov, method, ck.as_deref(), &out).map(drop)
        }
        Command::Report { records, out } => commands::cmd_report(&records, &ov, out.as_deref()).map(drop),
        Command::Bev { cube, out } => commands::cmd_bev(&cube, &out),
        Command::Experiment { out, steps } => commands::cmd_experiment(&out, &ov, steps).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
