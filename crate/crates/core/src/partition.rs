//! Single-cut pipeline split of a sequential model over two devices.
//!
//! Device A runs layers `[0, cut)` and device B runs `[cut, L)`, so cut 0
//! puts everything on B and cut L everything on A.

use serde::{Deserialize, Serialize};

use crate::aggregate::{sequential_sum, ModelPrediction};
use crate::compute::WaveModel;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::predictor::Predictor;
use crate::types::ModelGraph;

/// Optional inter-device transfer cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    pub link_bandwidth_gbs: f64,
    /// Bytes crossing the link for each cut, `L + 1` entries. Cut `L` has
    /// no downstream stage, so its entry is ignored.
    pub boundary_bytes: Vec<f64>,
}

impl TransferModel {
    fn validate(&self, layers: usize) -> Result<()> {
        if !(self.link_bandwidth_gbs > 0.0 && self.link_bandwidth_gbs.is_finite()) {
            return Err(Error::invalid("transfer", "link_bandwidth_gbs must be > 0"));
        }
        if self.boundary_bytes.len() != layers + 1 {
            return Err(Error::invalid(
                "transfer",
                format!(
                    "boundary_bytes needs {} entries, got {}",
                    layers + 1,
                    self.boundary_bytes.len()
                ),
            ));
        }
        if self.boundary_bytes.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::invalid("transfer", "boundary_bytes must be finite and >= 0"));
        }
        Ok(())
    }

    /// Microseconds to move the activations at `cut`.
    pub fn transfer_us(&self, cut: usize) -> f64 {
        self.boundary_bytes[cut] / (self.link_bandwidth_gbs * 1e3)
    }
}

/// Result of a scan over per-layer latencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub cut_after_layer_index: usize,
    pub stage_a_us: f64,
    pub stage_b_us: f64,
    pub transfer_us: f64,
    pub bottleneck_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub cut_after_layer_index: usize,
    pub stage_a_us: f64,
    /// Includes `transfer_us`.
    pub stage_b_us: f64,
    pub transfer_us: f64,
    pub bottleneck_us: f64,
    pub device_a: ModelPrediction,
    pub device_b: ModelPrediction,
}

/// Stage latencies for one cut, summed left to right.
pub fn stage_latencies(a: &[f64], b: &[f64], cut: usize, transfer: Option<&TransferModel>) -> Cut {
    let stage_a = sequential_sum(a[..cut].iter().copied());
    let t = match transfer {
        Some(t) if cut < b.len() => t.transfer_us(cut),
        _ => 0.0,
    };
    let stage_b = sequential_sum(b[cut..].iter().copied()) + t;
    Cut {
        cut_after_layer_index: cut,
        stage_a_us: stage_a,
        stage_b_us: stage_b,
        transfer_us: t,
        bottleneck_us: stage_a.max(stage_b),
    }
}

/// Minimum-bottleneck cut over per-layer latencies on each device. Ties go
/// to the smaller cut.
pub fn best_cut(a: &[f64], b: &[f64], transfer: Option<&TransferModel>) -> Result<Cut> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "partition",
            format!("{} latencies on device A, {} on device B", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("partition needs at least one layer".into()));
    }
    if let Some(t) = transfer {
        t.validate(a.len())?;
    }
    let l = a.len();
    let mut prefix = Vec::with_capacity(l + 1);
    prefix.push(0.0);
    for x in a {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + x);
    }
    let mut suffix = vec![0.0; l + 1];
    for i in (0..l).rev() {
        suffix[i] = b[i] + suffix[i + 1];
    }
    let mut best: Option<(f64, usize)> = None;
    for c in 0..=l {
        let t = match transfer {
            Some(t) if c < l => t.transfer_us(c),
            _ => 0.0,
        };
        let bottleneck = prefix[c].max(suffix[c] + t);
        if best.is_none_or(|(b, _)| bottleneck < b) {
            best = Some((bottleneck, c));
        }
    }
    let (_, cut) = best.expect("at least one cut");
    Ok(stage_latencies(a, b, cut, transfer))
}

/// Plans the split of `graph` between two devices.
pub fn partition_two_device(
    graph: &ModelGraph,
    ds_a: &Dataset,
    ds_b: &Dataset,
    wm_a: WaveModel,
    wm_b: WaveModel,
    transfer: Option<&TransferModel>,
) -> Result<PartitionPlan> {
    let pa = Predictor::with_wave_model(ds_a, wm_a)?;
    let pb = Predictor::with_wave_model(ds_b, wm_b)?;
    partition_with(graph, &pa, &pb, transfer)
}

pub fn partition_with(
    graph: &ModelGraph,
    device_a: &Predictor,
    device_b: &Predictor,
    transfer: Option<&TransferModel>,
) -> Result<PartitionPlan> {
    let ma = device_a.predict_model(graph)?;
    let mb = device_b.predict_model(graph)?;
    let cut = best_cut(&ma.latencies(), &mb.latencies(), transfer)?;
    Ok(PartitionPlan {
        cut_after_layer_index: cut.cut_after_layer_index,
        stage_a_us: cut.stage_a_us,
        stage_b_us: cut.stage_b_us,
        transfer_us: cut.transfer_us,
        bottleneck_us: cut.bottleneck_us,
        device_a: ma,
        device_b: mb,
    })
}

/// Steady-state pipeline time for `num_requests` requests.
pub fn throughput_estimate(stage_a_us: f64, stage_b_us: f64, num_requests: u64) -> f64 {
    let bottleneck = stage_a_us.max(stage_b_us);
    stage_a_us + stage_b_us + num_requests.saturating_sub(1) as f64 * bottleneck
}

impl PartitionPlan {
    pub fn throughput_estimate(&self, num_requests: u64) -> f64 {
        throughput_estimate(self.stage_a_us, self.stage_b_us, num_requests)
    }
}
