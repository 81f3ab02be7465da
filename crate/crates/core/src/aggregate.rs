//! Whole-model latency under sequential kernel execution.

use serde::{Deserialize, Serialize};

use crate::compute::WaveModel;
use crate::error::Result;
use crate::ingest::Dataset;
use crate::predictor::Predictor;
use crate::types::{Breakdown, ConfigMatch, ModelGraph, Prediction, RangeFlag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Compute,
    Membound,
}

/// Something about a layer's prediction worth a second look.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerFlag {
    BelowRange,
    AboveRange,
    NearestConfig,
    SoleCurve,
    Floored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrediction {
    pub layer_id: String,
    pub prediction: Prediction,
    pub predictor_kind: PredictorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedLayer {
    pub layer_id: String,
    pub flag: LayerFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub model_name: String,
    pub total_latency_us: f64,
    pub per_layer: Vec<LayerPrediction>,
    pub flags: Vec<FlaggedLayer>,
}

impl ModelPrediction {
    /// Per-layer latencies in graph order.
    pub fn latencies(&self) -> Vec<f64> {
        self.per_layer.iter().map(|l| l.prediction.latency_us).collect()
    }
}

fn flags_of(p: &Prediction) -> Vec<LayerFlag> {
    let mut out = Vec::new();
    match &p.components {
        Some(Breakdown::Compute(c)) => {
            match c.range {
                RangeFlag::BelowRange => out.push(LayerFlag::BelowRange),
                RangeFlag::AboveRange => out.push(LayerFlag::AboveRange),
                RangeFlag::InRange => {}
            }
            match c.config_match {
                Some(ConfigMatch::Nearest) => out.push(LayerFlag::NearestConfig),
                Some(ConfigMatch::SoleCurve) => out.push(LayerFlag::SoleCurve),
                _ => {}
            }
        }
        Some(Breakdown::MemBound(m)) if m.floored => out.push(LayerFlag::Floored),
        _ => {}
    }
    out
}

/// Left-to-right sum, the summation order every total in the crate uses.
pub fn sequential_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc + v)
}

impl Predictor {
    /// Predicts every layer in graph order and sums them. The first
    /// unresolvable layer aborts the run.
    pub fn predict_model(&self, graph: &ModelGraph) -> Result<ModelPrediction> {
        graph.validate()?;
        let mut per_layer = Vec::with_capacity(graph.layers.len());
        let mut flags = Vec::new();
        for layer in &graph.layers {
            let prediction = self.predict_layer(layer)?;
            for flag in flags_of(&prediction) {
                flags.push(FlaggedLayer {
                    layer_id: layer.layer_id.clone(),
                    flag,
                });
            }
            let predictor_kind = if layer.family.is_utility() {
                PredictorKind::Membound
            } else {
                PredictorKind::Compute
            };
            per_layer.push(LayerPrediction {
                layer_id: layer.layer_id.clone(),
                prediction,
                predictor_kind,
            });
        }
        let total_latency_us = sequential_sum(per_layer.iter().map(|l| l.prediction.latency_us));
        Ok(ModelPrediction {
            model_name: graph.model_name.clone(),
            total_latency_us,
            per_layer,
            flags,
        })
    }
}

pub fn predict_model(graph: &ModelGraph, dataset: &Dataset, wm: WaveModel) -> Result<ModelPrediction> {
    Predictor::with_wave_model(dataset, wm)?.predict_model(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{emit_fixture, fp32_preset, transformer_block};
    use crate::types::DType;

    #[test]
    fn single_layer_total_is_the_layer() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let mut g = transformer_block("b", DType::Fp32, 1, 128, 512, 8);
        g.layers.truncate(1);
        let mp = p.predict_model(&g).unwrap();
        assert_eq!(mp.total_latency_us, mp.per_layer[0].prediction.latency_us);
    }

    #[test]
    fn transformer_block_dispatches_both_predictors() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let g = transformer_block("b", DType::Fp32, 2, 128, 512, 8);
        let mp = p.predict_model(&g).unwrap();
        let kinds: Vec<_> = mp.per_layer.iter().map(|l| l.predictor_kind).collect();
        assert_eq!(
            kinds.iter().filter(|k| **k == PredictorKind::Membound).count(),
            2
        );
        assert_eq!(mp.total_latency_us, sequential_sum(mp.latencies()));
    }
}
