//! `wildsieve` command-line frontend.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "wildsieve",
    version,
    about = "Transient masks, masked metrics and augmentation for view synthesis"
)]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build per-frame motion masks from observed frames, static renderings and patch features.
    Pseudomask(PseudomaskArgs),
    /// Masked PSNR/SSIM/LPIPS between observed and rendered frames.
    Metrics(MetricsArgs),
    /// IoU and recall of predicted masks against ground truth.
    Evalmask(EvalmaskArgs),
    /// Copy-paste transient augmentation over a directory of scenes.
    Augment(AugmentArgs),
    /// Plücker ray maps for every camera in a camera file.
    Raymap(RaymapArgs),
    /// Clustered random token mask.
    Tokenmask(TokenmaskArgs),
    /// Run GrabCut on one image with a trimap and report the energy trace.
    GrabcutDebug(GrabcutDebugArgs),
    /// Split a camera trajectory into segments of a given path length.
    Segment(SegmentArgs),
    /// Write the synthetic moving-square scene used for testing.
    Fixture(FixtureArgs),
    /// Re-execute the command recorded in a config.echo.json.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PseudomaskArgs {
    #[arg(long)]
    pub observed: PathBuf,
    #[arg(long)]
    pub rendered: PathBuf,
    /// WRZF patch features of the observed frames.
    #[arg(long)]
    pub features: PathBuf,
    /// WRZF patch features of the rendered frames.
    #[arg(long)]
    pub rendered_features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    /// Frames whose rendering PSNR is at or below this are not masked.
    #[arg(long, default_value_t = 17.0)]
    pub psnr_gate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0025)]
    pub min_component_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub refine_band: usize,
    #[arg(long, default_value_t = 50.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5)]
    pub grabcut_iterations: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub observed: PathBuf,
    #[arg(long)]
    pub rendered: PathBuf,
    /// Grayscale PNG weights; 255 counts fully.
    #[arg(long)]
    pub mask: PathBuf,
    /// WRZL layer-difference stacks for masked LPIPS.
    #[arg(long)]
    pub lpips: Option<PathBuf>,
    /// Evaluate on the complement of the mask (the static region when masks mark transients).
    #[arg(long = "static")]
    pub static_region: bool,
    /// Ground-truth masks; adds mIoU and recall of `--mask` to the summary.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalmaskArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AugmentArgs {
    /// One subdirectory of PNG views per scene.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Object bank with manifest.json and RGBA sprites.
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub scene_probability: f64,
    #[arg(long, default_value_t = 0.8)]
    pub per_view_probability: f64,
    #[arg(long, default_value_t = 0.25)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 0.35)]
    pub scale_max: f64,
    #[arg(long, default_value_t = 0.15)]
    pub margin: f64,
    #[arg(long, default_value_t = 3.0)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub max_objects: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RaymapArgs {
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TokenmaskArgs {
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GrabcutDebugArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Gray levels 0/85/170/255 = background/probable background/probable foreground/foreground.
    #[arg(long)]
    pub trimap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub camera: PathBuf,
    /// Target path length per segment.
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub echo: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wildsieve_core::Error>() {
            return if e.is_io() || matches!(e, wildsieve_core::Error::Json(_)) {
                2
            } else {
                1
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WILDSIEVE_LOG", "warn")).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
