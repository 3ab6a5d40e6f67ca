use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "rplmac",
    version,
    about = "CSMA/CA + RPL analytical engine and simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Topology JSON file.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,

    /// Routing metric: etx, r, q, backpressure.
    #[arg(long, global = true)]
    pub metric: Option<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Experiment config JSON; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Reliability floor of the Q-metric.
    #[arg(long, global = true)]
    pub rmin: Option<f64>,

    /// Queue/ETX trade-off of the back-pressure baseline.
    #[arg(long = "bp-weight", global = true)]
    pub bp_weight: Option<f64>,

    #[arg(long, global = true)]
    pub m0: Option<u8>,

    #[arg(long, global = true)]
    pub mb: Option<u8>,

    #[arg(long, global = true)]
    pub m: Option<u8>,

    #[arg(long, global = true)]
    pub n: Option<u8>,

    /// Generation rate of every non-root node, pkt/s.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    /// Per-node rate override, e.g. `V2=20`; repeatable.
    #[arg(long = "lambda-node", global = true, value_name = "ID=PPS")]
    pub lambda_node: Vec<String>,

    /// Iteration cap of the analytical fixed point.
    #[arg(long = "max-iter", global = true)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the analytical model and write one CSV row per node.
    Solve,
    /// Run seeded simulation replications.
    Simulate(SimulateArgs),
    /// Search MAC parameters and metric over a constraint grid.
    Select(SelectArgs),
    /// Run several metrics on the same topology and seed.
    Compare(CompareArgs),
    /// Write a random layered topology.
    GenTopology(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Simulated seconds per run.
    #[arg(long)]
    pub duration: Option<f64>,

    /// Statistics ignore packets born before this time, seconds.
    #[arg(long)]
    pub warmup: Option<f64>,

    #[arg(long)]
    pub replications: Option<usize>,

    /// periodic-jitter or poisson.
    #[arg(long)]
    pub arrival: Option<String>,

    #[arg(long = "reselect-period")]
    pub reselect_period: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,

    /// `start:stop:log10` or `start:stop:lin:count`; one block of rows per
    /// rate.
    #[arg(long = "lambda-sweep")]
    pub lambda_sweep: Option<String>,

    /// JSON-lines trace of every run.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Comma-separated reliability floors.
    #[arg(long = "rmin-grid", default_value = "0,0.5,0.65,0.8,0.9,0.95,0.99,1")]
    pub rmin_grid: String,

    /// Comma-separated delay bounds in seconds; `inf` allowed.
    #[arg(long = "dmax-grid", default_value = "0.01,0.015,0.02,0.03,0.05,inf")]
    pub dmax_grid: String,

    #[arg(long, default_value = "m0=3:8;mb=m0:8;m=0:4;metrics=r,q")]
    pub space: String,

    /// Re-check every chosen configuration with one simulation run.
    #[arg(long = "validate-sim")]
    pub validate_sim: bool,

    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated metrics.
    #[arg(long, default_value = "r,q,backpressure")]
    pub metrics: String,

    /// solve, simulate or both.
    #[arg(long, default_value = "both")]
    pub mode: String,

    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Node count including the root.
    #[arg(long)]
    pub nodes: usize,

    /// Mean number of candidate parents per node.
    #[arg(long, default_value_t = 2.0)]
    pub density: f64,
}
