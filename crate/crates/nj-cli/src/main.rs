//! Command-line front end for the junction toolkit.
//!
//! Every subcommand reads the same JSON run configuration.  `run` chains
//! the whole pipeline; the other subcommands execute one stage so pieces
//! can be rerun or inspected in isolation.  Failures print the stage they
//! happened in and map to stable exit codes: 2 for configuration or input
//! problems, 3 when a solver fails to converge, 4 when a geometric
//! construction cannot be completed, 5 when too little data survives for a
//! fit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nj_cli::{pipeline, render};
use pipeline::StageFailure;

#[derive(Parser)]
#[command(
    name = "nj",
    version,
    about = "Symmetric junction minimizers and their radial structure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the two-well connection on a line and store its profile.
    Hetero {
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Profile CSV; a JSON sidecar with the energy lands next to it.
        #[arg(long, default_value = "profile.csv")]
        out: PathBuf,
        /// Half length of the solution interval.
        #[arg(long, default_value_t = 10.0)]
        half_length: f64,
        /// Interior grid cells on the interval.
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
    },
    /// Minimize twisted loops over a sweep of radii.
    Fiber {
        #[arg(long)]
        config: PathBuf,
        /// Radii, either start:end:step or a comma list.
        #[arg(long)]
        radii: String,
        #[arg(long, default_value = "fibers.csv")]
        out: PathBuf,
    },
    /// Minimize the disk energy at one radius.
    Disk {
        #[arg(long)]
        config: PathBuf,
        /// Disk radius; defaults to the grid radius in the configuration.
        #[arg(long = "R")]
        radius: Option<f64>,
        /// Starting guess: test, zero, or file:PATH.
        #[arg(long)]
        init: Option<String>,
        #[arg(long, default_value = "field.bin")]
        out: PathBuf,
    },
    /// Measure the radial structure of a stored field.
    Analyze {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Report path; theta_map.csv and interface.json land next to it.
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Draw a stored field (.bin) or interface description (.json) as SVG.
    Render {
        input: PathBuf,
        #[arg(long, default_value = "out.svg")]
        out: PathBuf,
        /// Required for fields: identifies the wells and the plateau level.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image width in pixels.
        #[arg(long, default_value_t = 900)]
        width: u32,
    },
    /// Full pipeline: connection, fiber sweep, disks, analysis, summary.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let outcome = match cli.command {
        Command::Hetero {
            config,
            out,
            half_length,
            nodes,
        } => pipeline::cmd_hetero(&config, &out, half_length, nodes)
            .map_err(|e| StageFailure::new("hetero", e)),
        Command::Fiber { config, radii, out } => {
            pipeline::cmd_fiber(&config, &radii, &out).map_err(|e| StageFailure::new("fiber", e))
        }
        Command::Disk {
            config,
            radius,
            init,
            out,
        } => pipeline::cmd_disk(&config, radius, init.as_deref(), &out)
            .map_err(|e| StageFailure::new("disk", e)),
        Command::Analyze { field, config, out } => pipeline::cmd_analyze(&field, &config, &out)
            .map_err(|e| StageFailure::new("analyze", e)),
        Command::Render {
            input,
            out,
            config,
            width,
        } => render::cmd_render(&input, &out, config.as_deref(), width)
            .map_err(|e| StageFailure::new("render", e)),
        Command::Run { config } => pipeline::cmd_run(&config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nj: stage {}: {}", f.stage, f.error);
            ExitCode::from(f.error.exit_code() as u8)
        }
    }
}

/// Cap the worker pool before any parallel region spins up the default.
fn init_threads() {
    if let Ok(raw) = std::env::var("NJ_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
