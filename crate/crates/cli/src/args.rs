use std::path::PathBuf;

use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Global,
    Country,
    Validate,
    #[value(name = "w-sweep")]
    WSweep,
}

/// Bayesian penalized B-spline estimation of under-five mortality.
#[derive(Debug, Clone, Parser)]
#[command(name = "u5mr", version)]
pub struct Args {
    #[arg(long, value_enum, default_value = "global")]
    pub mode: Mode,

    /// Observation CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// TOML file with `[model]`, `[validation]` and `[schema]` tables and an
    /// optional `births` path.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long)]
    pub chains: Option<usize>,

    #[arg(long)]
    pub iters: Option<usize>,

    #[arg(long)]
    pub burn: Option<usize>,

    #[arg(long)]
    pub thin: Option<usize>,

    /// Pooling weight of the global change distribution in projections.
    #[arg(long = "W", default_value_t = 0.5)]
    pub w: f64,

    /// Pooling weights compared in `w-sweep` mode.
    #[arg(long = "W-sweep", value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6")]
    pub w_sweep: Vec<f64>,

    /// Training cutoff year by survey date.
    #[arg(long)]
    pub cutoff: Option<f64>,

    #[arg(long = "n-sets")]
    pub n_sets: Option<usize>,

    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    /// Comma-separated country codes: plotted countries, and fitted
    /// countries in `country` mode.
    #[arg(long, value_delimiter = ',')]
    pub countries: Vec<String>,

    /// Last projected year.
    #[arg(long)]
    pub horizon: Option<f64>,

    /// Hyperparameter file from a global run, required in `country` mode.
    #[arg(long)]
    pub hyper: Option<PathBuf>,

    /// Fail with exit code 4 when any R̂ exceeds `--rhat-max`.
    #[arg(long)]
    pub strict: bool,

    #[arg(long = "rhat-max", default_value_t = 1.1)]
    pub rhat_max: f64,

    /// Run chains and projections on one thread.
    #[arg(long)]
    pub sequential: bool,

    /// Skip SVG plots.
    #[arg(long = "no-plots")]
    pub no_plots: bool,
}
