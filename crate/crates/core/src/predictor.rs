//! Per-layer dispatch over one device's dataset.

use std::collections::HashMap;

use crate::compute::{predict_compute, predict_generic, ConfigResolver, KernelInstance, WaveModel};
use crate::error::{Error, ErrorKind, Result};
use crate::ingest::Dataset;
use crate::membound::{
    fit_all, predict_membound_with_floor, scale_features, MemBoundModel, ScalingPolicy,
    DEFAULT_LAUNCH_FLOOR_US,
};
use crate::types::{
    Breakdown, ConfigMatch, DType, Family, KernelKey, LayerShape, LayerSpec, MatMulShape,
    MemBoundFeatures, Prediction, ThroughputCurve, TransposeMode,
};

/// Read-only prediction engine for one device.
#[derive(Debug, Clone)]
pub struct Predictor {
    device_id: String,
    wave_model: WaveModel,
    resolver: ConfigResolver,
    curves: HashMap<KernelKey, ThroughputCurve>,
    sole_curves: HashMap<(Family, DType, TransposeMode), Option<KernelKey>>,
    membound: HashMap<(String, DType), MemBoundModel>,
    launch_floor_us: f64,
    scaling: Option<ScalingPolicy>,
}

impl Predictor {
    /// Builds a predictor using the dataset's SM count and one block per SM.
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let wm = WaveModel::new(dataset.device.sm_count, 1)?;
        Self::with_wave_model(dataset, wm)
    }

    /// Builds a predictor with an explicit wave model. Utility kernels
    /// without a stored model are fitted from the dataset's records.
    pub fn with_wave_model(dataset: &Dataset, wave_model: WaveModel) -> Result<Self> {
        WaveModel::new(wave_model.sm_count, wave_model.blocks_per_sm)?;
        let resolver = ConfigResolver::new(&dataset.config_map)?;
        let mut sole_curves: HashMap<(Family, DType, TransposeMode), Option<KernelKey>> =
            HashMap::new();
        for key in dataset.curves.keys() {
            sole_curves
                .entry((key.family.clone(), key.dtype, key.transpose_mode))
                .and_modify(|k| *k = None)
                .or_insert_with(|| Some(key.clone()));
        }
        let mut membound = HashMap::new();
        for m in &dataset.membound_models {
            membound.insert((m.kernel_name.to_ascii_lowercase(), m.dtype), m.clone());
        }
        let missing: Vec<_> = dataset
            .membound_records
            .iter()
            .filter(|r| !membound.contains_key(&(r.kernel_name.to_ascii_lowercase(), r.dtype)))
            .cloned()
            .collect();
        if !missing.is_empty() {
            for m in fit_all(&missing, &dataset.device.device_id)? {
                membound.insert((m.kernel_name.to_ascii_lowercase(), m.dtype), m);
            }
        }
        Ok(Predictor {
            device_id: dataset.device.device_id.clone(),
            wave_model,
            resolver,
            curves: dataset
                .curves
                .iter()
                .map(|(k, c)| (k.clone(), c.clone()))
                .collect(),
            sole_curves,
            membound,
            launch_floor_us: DEFAULT_LAUNCH_FLOOR_US,
            scaling: None,
        })
    }

    pub fn with_launch_floor(mut self, floor_us: f64) -> Self {
        self.launch_floor_us = floor_us;
        self
    }

    /// Scales utility-kernel features before applying the models, for
    /// models trained on another device.
    pub fn with_scaling(mut self, policy: ScalingPolicy) -> Self {
        self.scaling = Some(policy);
        self
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn wave_model(&self) -> WaveModel {
        self.wave_model
    }

    pub fn curve(&self, key: &KernelKey) -> Option<&ThroughputCurve> {
        self.curves.get(key)
    }

    pub fn membound_model(&self, name: &str, dtype: DType) -> Option<&MemBoundModel> {
        self.membound.get(&(name.to_ascii_lowercase(), dtype))
    }

    /// Picks the kernel a compute launch would run: the recorded
    /// configuration if the triple has a config map, else the family's only
    /// curve.
    pub fn resolve(
        &self,
        family: &Family,
        dtype: DType,
        transpose: TransposeMode,
        shape: &LayerShape,
    ) -> Result<(KernelKey, ConfigMatch)> {
        if self.resolver.has(family, dtype, transpose) {
            let query = match shape {
                LayerShape::MatMul(s) => *s,
                LayerShape::Rows(r) => MatMulShape::new(1, r.rows, 1, r.dim),
            };
            return self.resolver.resolve(family, dtype, transpose, &query);
        }
        match self.sole_curves.get(&(family.clone(), dtype, transpose)) {
            Some(Some(key)) => Ok((key.clone(), ConfigMatch::SoleCurve)),
            _ => Err(Error::NoConfigAvailable {
                family: family.to_string(),
                dtype: dtype.to_string(),
                transpose: transpose.to_string(),
            }),
        }
    }

    /// Predicts a launch of `key` directly.
    pub fn predict_with_key(&self, key: &KernelKey, shape: &LayerShape) -> Result<Prediction> {
        let curve = self.curves.get(key).ok_or_else(|| Error::UnknownKernel {
            key: key.to_string(),
        })?;
        let wm = self.wave_model.for_curve(curve);
        match shape {
            LayerShape::MatMul(s) if matches!(key.family, Family::MatMul | Family::BatchedMatMul | Family::Linear) => {
                predict_compute(s, key, curve, &wm)
            }
            _ => predict_generic(
                &KernelInstance {
                    family: key.family.clone(),
                    shape: shape.clone(),
                },
                key,
                curve,
                &wm,
            ),
        }
    }

    /// Resolves and predicts a compute launch.
    pub fn predict_compute_shape(
        &self,
        family: &Family,
        dtype: DType,
        transpose: TransposeMode,
        shape: &LayerShape,
    ) -> Result<Prediction> {
        if family.is_utility() {
            return Err(Error::UnknownFamily {
                family: family.to_string(),
            });
        }
        let (key, how) = self.resolve(family, dtype, transpose, shape)?;
        let mut p = self.predict_with_key(&key, shape)?;
        set_match(&mut p, how);
        Ok(p)
    }

    pub fn predict_utility(
        &self,
        name: &str,
        dtype: DType,
        features: &MemBoundFeatures,
    ) -> Result<Prediction> {
        features.validate()?;
        let model = self
            .membound_model(name, dtype)
            .ok_or_else(|| Error::UnknownKernel {
                key: KernelKey::utility(name, dtype).to_string(),
            })?;
        let features = match &self.scaling {
            Some(p) => scale_features(features, p),
            None => *features,
        };
        Ok(predict_membound_with_floor(
            model,
            &features,
            self.launch_floor_us,
        ))
    }

    /// Predicts one layer. Failures carry the layer id; prediction failures
    /// become [`Error::UnresolvedLayer`].
    pub fn predict_layer(&self, layer: &LayerSpec) -> Result<Prediction> {
        self.predict_layer_inner(layer).map_err(|e| match e.kind() {
            ErrorKind::Prediction => match e {
                Error::UnresolvedLayer { .. } => e,
                other => Error::UnresolvedLayer {
                    layer_id: layer.layer_id.clone(),
                    device: Some(self.device_id.clone()),
                    reason: other.to_string(),
                },
            },
            ErrorKind::Data => match e {
                Error::Validation { locator, message } => Error::Validation {
                    locator: format!("layer {} ({locator})", layer.layer_id),
                    message,
                },
                other => Error::invalid(format!("layer {}", layer.layer_id), other.to_string()),
            },
            ErrorKind::Io => e,
        })
    }

    fn predict_layer_inner(&self, layer: &LayerSpec) -> Result<Prediction> {
        if let Family::Utility(name) = &layer.family {
            let features = layer.features.as_ref().ok_or_else(|| Error::UnresolvedLayer {
                layer_id: layer.layer_id.clone(),
                device: Some(self.device_id.clone()),
                reason: format!("utility layer {name} has no features"),
            })?;
            if let Some(key) = &layer.resolved_key {
                if !key.family.is_utility() {
                    return Err(Error::invalid("kernel", "pinned kernel is not a utility kernel"));
                }
            }
            return self.predict_utility(name, layer.dtype, features);
        }
        let shape = layer.shape.as_ref().ok_or_else(|| Error::UnresolvedLayer {
            layer_id: layer.layer_id.clone(),
            device: Some(self.device_id.clone()),
            reason: format!("{} layer has no shape", layer.family),
        })?;
        let shape_fits = match shape {
            LayerShape::MatMul(_) => layer.family.is_matmul_like(),
            LayerShape::Rows(_) => layer.family.is_row_generic(),
        };
        if !shape_fits {
            return Err(Error::invalid(
                "shape",
                format!("shape does not fit family {}", layer.family),
            ));
        }
        match &layer.resolved_key {
            Some(key) => {
                if key.family != layer.family || key.dtype != layer.dtype {
                    return Err(Error::invalid(
                        "kernel",
                        format!("pinned kernel {key} does not match the layer's family/dtype"),
                    ));
                }
                let mut p = self.predict_with_key(key, shape)?;
                set_match(&mut p, ConfigMatch::Given);
                Ok(p)
            }
            None => self.predict_compute_shape(&layer.family, layer.dtype, layer.transpose(), shape),
        }
    }
}

fn set_match(p: &mut Prediction, how: ConfigMatch) {
    if let Some(Breakdown::Compute(c)) = p.components.as_mut() {
        c.config_match = Some(how);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{custom_preset, emit_fixture, fp32_preset};
    use crate::types::{RangeFlag, RowShape};

    fn layer(id: &str, family: Family, shape: LayerShape) -> LayerSpec {
        LayerSpec {
            layer_id: id.into(),
            family,
            dtype: DType::Fp32,
            shape: Some(shape),
            features: None,
            transpose_mode: None,
            resolved_key: None,
        }
    }

    #[test]
    fn exact_config_hit_reports_match() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let l = layer(
            "l0",
            Family::Linear,
            LayerShape::MatMul(MatMulShape::new(1, 512, 512, 1024)),
        );
        let pred = p.predict_layer(&l).unwrap();
        let c = pred.compute_breakdown().unwrap();
        assert_eq!(c.config_match, Some(ConfigMatch::Exact));
        assert_eq!(c.range, RangeFlag::InRange);
        assert_eq!(pred.kernel.transpose_mode, TransposeMode::Tn);
    }

    #[test]
    fn missing_dtype_is_unresolved() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let mut l = layer(
            "l0",
            Family::MatMul,
            LayerShape::MatMul(MatMulShape::new(1, 64, 64, 64)),
        );
        l.dtype = DType::Bf16;
        match p.predict_layer(&l) {
            Err(Error::UnresolvedLayer { layer_id, .. }) => assert_eq!(layer_id, "l0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn utility_models_are_fitted_from_records() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        assert!(ds.membound_models.is_empty());
        let p = Predictor::new(&ds).unwrap();
        let planted = cfg.device.utility("gelu", DType::Fp32).unwrap();
        let f = MemBoundFeatures {
            flops: 4e6,
            int_ops: 1e6,
            bytes_loaded: 4e6,
            bytes_stored: 4e6,
            total_bytes_accessed: 8e6,
        };
        let got = p.predict_utility("GeLU", DType::Fp32, &f).unwrap().latency_us;
        let want = planted.latency(&f);
        assert!((got - want).abs() / want < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn unknown_utility_is_unresolved() {
        let cfg = fp32_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let l = LayerSpec {
            layer_id: "x".into(),
            family: Family::Utility("frobnicate".into()),
            dtype: DType::Fp32,
            shape: None,
            features: Some(MemBoundFeatures::from_array([1.0; 5])),
            transpose_mode: None,
            resolved_key: None,
        };
        assert!(matches!(p.predict_layer(&l), Err(Error::UnresolvedLayer { .. })));
    }

    #[test]
    fn row_families_resolve_through_the_config_map() {
        let cfg = custom_preset();
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let mut l = layer(
            "attn",
            Family::FlashAttention,
            LayerShape::Rows(RowShape { rows: 4096, dim: 512 }),
        );
        l.dtype = DType::Bf16;
        let pred = p.predict_layer(&l).unwrap();
        let truth = cfg.device.layer_truth(&l, &p.wave_model()).unwrap();
        assert!((pred.latency_us - truth).abs() / truth < 1e-12);
    }
}
