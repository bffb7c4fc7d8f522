use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "checkerfree", version, about = "Find and remove checkerboard artifacts in CNN upsampling layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Network config (analyze) or training run config (train), JSON
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Checkpoint file (its `.json` sidecar is read too), or a bare tensor file for lint
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,

    /// Upscaling factor U
    #[arg(long, global = true)]
    pub factor: Option<usize>,

    /// Tolerance for DC equality / checkerboard score
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for reports, manifests and artifacts
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Print the JSON report on stdout instead of a summary
    #[arg(long, global = true)]
    pub json: bool,

    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check upsampler weights against the equal-DC condition
    Lint,
    /// Step-response analysis of a network
    Analyze(AnalyzeArgs),
    /// Train a network from a run config
    Train(TrainArgs),
    /// Upscale an image with a trained network
    Sr(SrArgs),
    /// Time inference of the standard networks
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Preset name, used when neither --weights nor --config is given
    #[arg(long)]
    pub preset: Option<String>,

    /// Side of the constant input image (LR samples); defaults to the minimum
    #[arg(long)]
    pub input_size: Option<usize>,

    #[arg(long, default_value_t = 1.0)]
    pub level: f64,

    /// Image to run through the network for a checkerboard heatmap
    #[arg(long)]
    pub image: Option<PathBuf>,

    /// Where to write the heatmap PNG (needs --image)
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Also write a checkpoint every N iterations
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Defaults to <out>/sr.png
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Ground-truth image; PSNR is reported on the Y channel
    #[arg(long)]
    pub reference: Option<PathBuf>,

    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Preset names to time (default: the six standard rows)
    #[arg(long, value_delimiter = ',')]
    pub networks: Vec<String>,

    /// Sizes as WxH, comma separated
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<String>,

    #[arg(long, default_value_t = 3)]
    pub repeats: usize,

    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}
