use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kernlat", version, about = "Kernel-aware GPU latency prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Profiled dataset of the target device.
    #[arg(long, global = true, env = "PM2LAT_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Write machine output here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Noise seed for `oracle emit`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `precompute`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Only report errors on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate dataset files and merge them into one dataset.
    Ingest {
        /// Dataset files; defaults to --dataset.
        files: Vec<PathBuf>,
    },
    /// Fit memory-bound models from the dataset's records.
    Fit {
        /// Refit kernels that already have a stored model.
        #[arg(long)]
        refit: bool,
    },
    /// Predict one kernel launch.
    Predict(PredictArgs),
    /// Predict every layer of a model graph and the total.
    PredictModel {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Predict every point of a grid and write a latency cache.
    Precompute {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave unresolvable points out instead of failing.
        #[arg(long)]
        skip_unresolved: bool,
    },
    /// Look up one point in a latency cache.
    Lookup {
        #[arg(long)]
        cache: PathBuf,
        /// Point as `axis=value` pairs, e.g. `m=512,n=512,k=1024`.
        #[arg(long, value_delimiter = ',', required = true)]
        point: Vec<String>,
        /// Also check the cache against this grid file.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Split a model between the --dataset device and a second device.
    Partition {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        dataset_b: PathBuf,
        /// Requests for the pipeline time estimate.
        #[arg(long, default_value_t = 1)]
        requests: u64,
        /// Transfer model JSON (`link_bandwidth_gbs`, `boundary_bytes`).
        #[arg(long)]
        transfer: Option<PathBuf>,
    },
    /// Error and curve reports.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Synthetic device fixtures.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Kernel family (matmul, bmm, linear, triton_mm, triton_vec,
    /// flash_attention, cutlass_attention) or a utility kernel name.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub dtype: String,
    #[arg(long)]
    pub transpose: Option<String>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    /// Rows of a row-parallel kernel.
    #[arg(long)]
    pub rows: Option<u64>,
    /// Varying dimension of a row-parallel kernel.
    #[arg(long)]
    pub dim: Option<u64>,
    #[arg(long)]
    pub flops: Option<f64>,
    #[arg(long)]
    pub int_ops: Option<f64>,
    #[arg(long)]
    pub bytes_loaded: Option<f64>,
    #[arg(long)]
    pub bytes_stored: Option<f64>,
    #[arg(long)]
    pub total_bytes: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Signed relative errors, binned maxima and histogram for measured
    /// cases.
    Errors {
        /// JSON list of `{case_id, measured_us, predicted_us, axis?}`.
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 100)]
        bins: usize,
    },
    /// Rational fit and interpolation error of every curve in the dataset.
    Grid {
        /// Compare against the planted curves of this oracle config instead
        /// of each curve's rational fit.
        #[arg(long, conflicts_with = "preset")]
        oracle_config: Option<PathBuf>,
        /// Same, with a built-in preset.
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Measure a synthetic device and write the fixture dataset.
    Emit {
        /// Built-in preset: fp32, bf16 or custom.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Oracle config JSON (`device`, `plan`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Relative noise sigma of the log-normal measurement noise.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Print a preset's oracle config as a starting point for custom ones.
    Config {
        #[arg(long)]
        preset: String,
    },
}
