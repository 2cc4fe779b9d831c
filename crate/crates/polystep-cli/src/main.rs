//! `polystep` — staircase perception and footstep planning simulator.
//!
//! Subcommands cover the pipeline end to end on synthetic data: `render`
//! depth frames, `map` them into polygon segments, `estimate` fused
//! odometry from recorded streams, `plan` footsteps from a polygon map,
//! `run` the whole closed-loop scenario, and `bench` the perception
//! throughput.
//!
//! Exit codes: 0 success, 2 validation/usage error, 3 scenario failure.

mod commands;
mod io;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "polystep", version, about = "Polygonal stair mapping and footstep planning simulator")]
struct Cli {
    /// Scenario config file (TOML, `schema = 1`); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render depth frames of the configured staircase to a directory.
    Render {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Number of frames.
        #[arg(long, default_value_t = 1)]
        frames: u32,
        /// RNG seed for sensor noise.
        #[arg(long)]
        seed: u64,
    },
    /// Replay odometry streams through the complementary fuser.
    Estimate {
        /// Input JSON Lines stream with kinematic and lio samples.
        #[arg(long, required_unless_present = "synth_duration")]
        input: Option<PathBuf>,
        /// Ground-truth JSON Lines stream (enables the drift metrics CSV).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Synthesize the streams instead of reading them: duration in seconds.
        #[arg(long, conflicts_with = "input")]
        synth_duration: Option<f64>,
        /// RNG seed (required for --synth-duration).
        #[arg(long, required_if_eq_any = [("synth_duration", "synth_duration")])]
        seed: Option<u64>,
        /// Where to write the fused stream (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Drift metrics CSV (t, per-source position errors).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory to save synthesized truth/kinematic/lio streams.
        #[arg(long)]
        save_streams: Option<PathBuf>,
    },
    /// Extract polygon maps from rendered depth frames.
    Map {
        /// Directory produced by `render`.
        #[arg(long)]
        frames: PathBuf,
        /// Output polygon JSON Lines file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate foothold candidates and a footstep plan from a polygon map.
    Plan {
        /// Polygon JSON Lines file (from `map` or `run --polygons`).
        #[arg(long)]
        map: PathBuf,
        /// Base pose "x,y,z,yaw" in the map frame.
        #[arg(long)]
        pose: String,
        /// Sole height relative to the base (defaults to -z_t from config).
        #[arg(long)]
        sole_z: Option<f64>,
        /// Output plan JSON Lines file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the selected candidate record here.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Debug dump of the pre/post-erosion grid as CSV.
        #[arg(long)]
        grid_dump: Option<PathBuf>,
    },
    /// Run the full closed-loop scenario and write the report.
    Run {
        /// RNG seed for all noise streams.
        #[arg(long)]
        seed: u64,
        /// Report JSON path.
        #[arg(long)]
        report: PathBuf,
        /// Desired-vs-executed foot tracking CSV.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Odometry streams JSON Lines (kinematic, lio, fused).
        #[arg(long)]
        odometry: Option<PathBuf>,
        /// Planned steps JSON Lines.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Foothold grid debug CSV (last planning pass).
        #[arg(long)]
        grid_dump: Option<PathBuf>,
        /// Last frame's polygon map JSON Lines.
        #[arg(long)]
        polygons: Option<PathBuf>,
    },
    /// Measure polygon extraction throughput on rendered frames.
    Bench {
        /// Number of frames to process.
        #[arg(long, default_value_t = 50)]
        frames: u32,
        /// RNG seed for sensor noise.
        #[arg(long)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = io::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Render { out, frames, seed } => {
            commands::render(&cfg, &out, frames, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate {
            input,
            truth,
            synth_duration,
            seed,
            out,
            metrics,
            save_streams,
        } => {
            commands::estimate(
                &cfg,
                input.as_deref(),
                truth.as_deref(),
                synth_duration,
                seed,
                &out,
                metrics.as_deref(),
                save_streams.as_deref(),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Map { frames, out } => {
            commands::map(&cfg, &frames, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan {
            map,
            pose,
            sole_z,
            out,
            candidates,
            grid_dump,
        } => {
            commands::plan(
                &cfg,
                &map,
                &pose,
                sole_z,
                &out,
                candidates.as_deref(),
                grid_dump.as_deref(),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            seed,
            report,
            traces,
            odometry,
            plans,
            grid_dump,
            polygons,
        } => commands::run_cmd(
            &cfg,
            seed,
            &report,
            traces.as_deref(),
            odometry.as_deref(),
            plans.as_deref(),
            grid_dump.as_deref(),
            polygons.as_deref(),
        ),
        Command::Bench { frames, seed } => {
            commands::bench(&cfg, frames, seed)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
