use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qcrt::pipeline::{self, CliError, Ctx};

/// Correlated-photon 3D imaging: simulate two time-tagged hit streams,
/// pair them in time, and reconstruct refocused images, parallax views,
/// and depth maps.
#[derive(Parser)]
#[command(name = "qcrt", version, max_term_width = 100)]
struct Cli {
    /// Pipeline configuration, TOML.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the [simulator] seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory for artifacts and reports.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Worker threads for stack rendering. Defaults to all cores; any
    /// value gives identical output.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate hit streams and a ground-truth table from the configured
    /// source and scene.
    Simulate,
    /// Cluster hits into photon events and extract time-matched pairs.
    Correlate {
        /// Override the [coincidence] gate width, nanoseconds.
        #[arg(long, value_name = "NS")]
        gate_ns: Option<f64>,
        /// Image-arm hits (.qcrt binary or .csv). Default: OUT/hits_image.qcrt.
        #[arg(long, value_name = "PATH")]
        hits_image: Option<PathBuf>,
        /// Fourier-arm hits (.qcrt binary or .csv). Default: OUT/hits_fourier.qcrt.
        #[arg(long, value_name = "PATH")]
        hits_fourier: Option<PathBuf>,
    },
    /// Render images, focal stacks, parallax views, or a depth map from
    /// extracted pairs.
    Reconstruct {
        #[command(subcommand)]
        what: Reconstruct,
    },
    /// Print the run reports in the output directory and re-check their
    /// bookkeeping identities.
    Report,
}

#[derive(Subcommand)]
enum Reconstruct {
    /// One refocused image at a chosen depth.
    Refocus {
        /// Refocus depth, millimeters from the sample plane. Default:
        /// [reconstruction] z_mm.
        #[arg(long, value_name = "MM", allow_negative_numbers = true)]
        z_mm: Option<f64>,
        /// Pair table. Default: OUT/pairs.csv.
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,
    },
    /// A ladder of refocused slices plus an index table.
    Stack {
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,
    },
    /// Nine sub-aperture views on a 3x3 angular grid.
    Parallax {
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,
    },
    /// Shape-from-focus depth map, confidence, mask, and depth histogram.
    Depthmap {
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Simulate => {
            let ctx = Ctx::load(config, &cli.out, cli.seed, None)?;
            pipeline::cmd_simulate(&ctx)
        }
        Command::Correlate {
            gate_ns,
            hits_image,
            hits_fourier,
        } => {
            let ctx = Ctx::load(config, &cli.out, cli.seed, gate_ns)?;
            pipeline::cmd_correlate(&ctx, hits_image, hits_fourier)
        }
        Command::Reconstruct { what } => {
            let ctx = Ctx::load(config, &cli.out, cli.seed, None)?;
            match what {
                Reconstruct::Refocus { z_mm, pairs } => pipeline::cmd_refocus(&ctx, z_mm, pairs),
                Reconstruct::Stack { pairs } => pipeline::cmd_stack(&ctx, pairs),
                Reconstruct::Parallax { pairs } => pipeline::cmd_parallax(&ctx, pairs),
                Reconstruct::Depthmap { pairs } => pipeline::cmd_depthmap(&ctx, pairs),
            }
        }
        Command::Report => pipeline::cmd_report(&cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A second build_global in one process is an error; the CLI only
        // configures the pool once, so failure here means a bug.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("rayon pool is configured once, before any parallel work");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
