use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semfield::scene::load_scene;
use semfield::segment::DEFAULT_THRESHOLDS;
use semfield::GaussianField;
use semfield_cli::api::parse_pose;
use semfield_cli::commands::{self, Cameras, FitArgs, SegmentMode, SynthArgs};
use semfield_cli::service::{self, ServiceConfig};

#[derive(Parser)]
#[command(name = "semfield", version, about = "Fit, render and segment semantic Gaussian fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with its oracle field.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        gaussians: usize,
        #[arg(long, default_value_t = 6)]
        views: usize,
        #[arg(long, default_value_t = 2)]
        heldout: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Initialize from the cost volume and run both fitting stages.
    Fit {
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML fit configuration; missing keys use defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from an existing field instead of the cost volume.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        stride: usize,
        /// Write the loss history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Render color, alpha, depth and PCA feature images.
    Render {
        scene: PathBuf,
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Render N cameras on a ring instead of the scene views.
        #[arg(long, conflicts_with = "pose")]
        pose_ring: Option<usize>,
        /// Render one pose given as 12 comma-separated floats.
        #[arg(long, allow_hyphen_values = true)]
        pose: Option<String>,
    },
    /// Point-prompt or open-vocabulary segmentation of one view.
    Segment {
        scene: PathBuf,
        field: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Prompt pixel as x,y; without it, label every pixel.
        #[arg(long)]
        point: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a field against the scene's held-out views.
    Eval {
        scene: PathBuf,
        field: PathBuf,
        /// CSV output; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Serve the read-only HTTP API.
    Serve {
        scene: PathBuf,
        field: PathBuf,
        /// Overridden by SEMFIELD_BIND when set.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: std::net::SocketAddr,
        #[arg(long, default_value_t = 1024)]
        max_resolution: usize,
    },
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("point must be x,y, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("point {s:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Synth { out, seed, gaussians, views, heldout, size } => {
            let scene = commands::synth(&SynthArgs { out: out.clone(), seed, gaussians, views, heldout, size })?;
            println!("wrote {} views to {}", scene.views.len(), out.display());
        }
        Command::Fit { scene, out, config, init, stride, history } => {
            let f = commands::fit_scene(&FitArgs { scene, out: out.clone(), config, init, stride, history })?;
            println!("wrote {} Gaussians to {}", f.len(), out.display());
        }
        Command::Render { scene, field, out, pose_ring, pose } => {
            let which = match (pose_ring, pose) {
                (Some(n), _) => Cameras::Ring(n),
                (None, Some(p)) => Cameras::Pose(parse_pose(&p)?),
                (None, None) => Cameras::Views,
            };
            let scene = load_scene(scene)?;
            let field = GaussianField::load(field)?;
            for p in commands::render_cameras(&scene, &field, &which, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Segment { scene, field, view, point, out } => {
            let mode = match point {
                Some(p) => {
                    let (x, y) = parse_point(&p)?;
                    SegmentMode::Point { x, y, thresholds: DEFAULT_THRESHOLDS }
                }
                None => SegmentMode::Labels,
            };
            let scene = load_scene(scene)?;
            let field = GaussianField::load(field)?;
            for p in commands::segment_view(&scene, &field, view, &mode, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { scene, field, out, grid } => {
            let scene = load_scene(scene)?;
            let field = GaussianField::load(field)?;
            let csv = commands::metrics_csv(&commands::evaluate(&scene, &field, grid, DEFAULT_THRESHOLDS)?);
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Serve { scene, field, bind, max_resolution } => {
            let mut cfg = ServiceConfig::new(scene, field);
            cfg.bind = bind;
            cfg.max_resolution = max_resolution;
            let cfg = cfg.with_env()?;
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
