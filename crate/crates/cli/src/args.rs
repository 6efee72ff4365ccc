use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::settings::List;

#[derive(Debug, Parser)]
#[command(name = "tpabc", version, about = "Tree-pyramid approximate Bayesian computation for reaching-goal inference")]
pub struct Cli {
    /// `key=value` config file; command-line flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate reaching trajectories to random table goals.
    GenData(GenDataArgs),
    /// Train the trajectory surrogate on a dataset.
    Train(TrainArgs),
    /// Infer the goal of one recorded trajectory.
    Infer(InferArgs),
    /// Compare inference methods over many trajectories.
    Bench(BenchArgs),
    /// Report the inferred slack of every trajectory and flag outliers.
    SlackScan(SlackScanArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of trajectories.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file; a `.meta` sidecar is written next to it.
    #[arg(long)]
    pub out: Option<String>,
    /// Observation noise std in meters.
    #[arg(long)]
    pub sigma_obs: Option<f64>,
    /// Goal box center as `x,y` (defaults to the table center).
    #[arg(long)]
    pub bounds_center: Option<List<f64>>,
    /// Goal box half-width in meters (defaults to the table's).
    #[arg(long)]
    pub bounds_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<String>,
    /// Weight file; the per-epoch loss log goes to `<out>.loss.csv`.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training-noise std added to every target presentation.
    #[arg(long)]
    pub epsilon_star: Option<f64>,
    /// Hidden layer widths, comma-separated.
    #[arg(long)]
    pub hidden: Option<List<usize>>,
}

/// Where predicted trajectories come from.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Trained surrogate weight file.
    #[arg(long)]
    pub weights: Option<String>,
    /// Use the simulator itself instead of a surrogate.
    #[arg(long)]
    pub raw_sim: bool,
}

/// Method parameters shared by `infer` and `bench`.
#[derive(Debug, Args)]
pub struct MethodArgs {
    /// Tree resolution: nodes at or below this radius are not expanded.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Tree expansion threshold per compared coordinate (non-positive).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Grid spacing in meters (defaults to rho).
    #[arg(long)]
    pub h: Option<f64>,
    /// Evaluation budget for rejection and SMC.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Rejection tolerance on the RMS residual.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// SMC tolerance schedule, strictly decreasing.
    #[arg(long)]
    pub schedule: Option<List<f64>>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub chain_length: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// MH proposal std for the goal coordinates, in meters.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Resample when the effective sample size falls below this fraction.
    #[arg(long)]
    pub resample_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: Option<String>,
    /// Record to infer, zero-based.
    #[arg(long)]
    pub index: Option<usize>,
    /// One of tp, grid, abc_reject, abc_smc, mcmc_mh, particle_filter.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub observed_frac: Option<f64>,
    /// Replay the trajectory frame by frame.
    #[arg(long)]
    pub stream: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub params: MethodArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: Option<String>,
    /// Comma-separated method tags.
    #[arg(long)]
    pub methods: Option<List<String>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated observed fractions.
    #[arg(long)]
    pub observed_frac: Option<List<f64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub params: MethodArgs,
}

#[derive(Debug, Args)]
pub struct SlackScanArgs {
    #[arg(long)]
    pub data: Option<String>,
    /// Report CSV.
    #[arg(long)]
    pub out: Option<String>,
    /// Slack above which an observation is flagged, in meters.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub observed_frac: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub source: SourceArgs,
}
