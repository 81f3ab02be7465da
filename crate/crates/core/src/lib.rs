//! Kernel-aware latency prediction for DNN workloads on SIMT GPUs.
//!
//! Compute-bound kernels are priced from per-kernel throughput curves and a
//! tile/wave schedule; memory-bound utility kernels from a linear model over
//! proxy metrics. Whole models are the sum of their layers.

pub mod aggregate;
pub mod compute;
pub mod curve;
pub mod error;
pub mod ingest;
mod linalg;
pub mod membound;
pub mod nas;
pub mod oracle;
pub mod partition;
pub mod predictor;
pub mod report;
pub mod types;

pub use aggregate::{predict_model, LayerFlag, ModelPrediction, PredictorKind};
pub use compute::{
    block_count, interpolate_throughput, predict_compute, predict_generic, resolve_config,
    row_wave_count, wave_count, ConfigResolver, KernelInstance, WaveModel,
};
pub use curve::{fit_rational, grid_error_report, GridErrorReport, RationalFit};
pub use error::{Error, ErrorKind, Result};
pub use ingest::{
    load_dataset, load_model_graph, merge_datasets, save_dataset, ConfigRecord, Dataset,
    MemBoundRecord,
};
pub use membound::{
    derive_policy, predict_membound, scale_features, MemBoundModel, ScalingPolicy,
};
pub use nas::{precompute, CacheStore, GridSpec, PrecomputeOptions, PrecomputeSummary};
pub use oracle::{emit_fixture, OracleConfig, SamplingPlan, SyntheticDevice};
pub use partition::{partition_two_device, throughput_estimate, PartitionPlan, TransferModel};
pub use predictor::Predictor;
pub use report::{build_error_report, relative_error, Case, ErrorReport};
pub use types::*;
