//! A deterministic synthetic SIMT device.
//!
//! Each registered kernel has a planted rational throughput curve
//! `(a·x + b)/(c·x + d)` in GFLOP/s along its varying dimension. A launch
//! runs `waves` sequential waves; every wave costs the work of one full
//! wave of blocks divided by the throughput at the launch's varying
//! dimension. Utility kernels follow planted linear models over the proxy
//! metrics. Measurement noise is multiplicative log-normal with unit mean,
//! drawn from a stream keyed by (kernel, shape) so results never depend on
//! evaluation order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compute::{row_wave_count, wave_count, WaveModel};
use crate::error::{Error, Result};
use crate::ingest::{ConfigRecord, Dataset, MemBoundRecord};
use crate::types::{
    CurveSample, DType, DeviceProfile, Family, KernelKey, LayerShape, LayerSpec, Library,
    MatMulShape, MemBoundFeatures, ModelGraph, RowShape, ThroughputCurve, TransposeMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RationalParams {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) / (self.c * x + self.d)
    }

    /// Saturating curve `peak·(x + offset)/(x + half)`.
    pub fn saturating(peak: f64, offset: f64, half: f64) -> Self {
        RationalParams {
            a: peak,
            b: peak * offset,
            c: 1.0,
            d: half,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedKernel {
    pub key: KernelKey,
    pub curve: RationalParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_per_sm: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUtility {
    pub kernel_name: String,
    pub dtype: DType,
    pub weights: [f64; 5],
    pub intercept: f64,
}

impl PlantedUtility {
    pub fn latency(&self, f: &MemBoundFeatures) -> f64 {
        self.weights
            .iter()
            .zip(f.to_array())
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDevice {
    pub profile: DeviceProfile,
    pub kernels: Vec<PlantedKernel>,
    #[serde(default)]
    pub utilities: Vec<PlantedUtility>,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub noise_rel_sigma: f64,
}

/// What to measure when emitting a fixture dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Values of the varying dimension; the largest is the reference point.
    pub dims: Vec<u64>,
    /// Waves per launch for the reference shapes (before split-K).
    pub target_waves: u64,
    pub repetitions: u32,
    /// Shapes recorded in the config map for every GEMM-family triple.
    #[serde(default)]
    pub config_shapes: Vec<MatMulShape>,
    /// Shapes recorded for row-parallel families.
    #[serde(default)]
    pub row_config_shapes: Vec<RowShape>,
    #[serde(default)]
    pub membound_samples: usize,
}

impl SamplingPlan {
    pub fn powers_of_two(lo_exp: u32, hi_exp: u32) -> Vec<u64> {
        (lo_exp..=hi_exp).map(|p| 1u64 << p).collect()
    }
}

/// A device plus a sampling plan: the `oracle emit` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub device: SyntheticDevice,
    pub plan: SamplingPlan,
}

impl SyntheticDevice {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !(self.noise_rel_sigma.is_finite() && self.noise_rel_sigma >= 0.0) {
            return Err(Error::invalid("synthetic device", "noise_rel_sigma must be >= 0"));
        }
        let mut seen = std::collections::HashSet::new();
        for k in &self.kernels {
            k.key.validate()?;
            if !seen.insert(&k.key) {
                return Err(Error::invalid(
                    "synthetic device",
                    format!("kernel {} registered twice", k.key),
                ));
            }
            // Positive throughput over [1, 2·8192] and beyond.
            for x in [1.0, 16384.0] {
                if !(k.curve.eval(x) > 0.0 && k.curve.c * x + k.curve.d > 0.0) {
                    return Err(Error::invalid(
                        format!("planted curve {}", k.key),
                        format!("throughput not positive at {x}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn wave_model(&self) -> WaveModel {
        WaveModel {
            sm_count: self.profile.sm_count,
            blocks_per_sm: 1,
        }
    }

    pub fn kernel(&self, key: &KernelKey) -> Result<&PlantedKernel> {
        self.kernels
            .iter()
            .find(|k| &k.key == key)
            .ok_or_else(|| Error::UnknownKernel {
                key: key.to_string(),
            })
    }

    fn occupancy(&self, planted: &PlantedKernel, wm: &WaveModel) -> WaveModel {
        WaveModel {
            sm_count: wm.sm_count,
            blocks_per_sm: planted.blocks_per_sm.unwrap_or(wm.blocks_per_sm),
        }
    }

    /// Noise-free duration of a launch, in microseconds.
    pub fn ideal_duration(&self, key: &KernelKey, shape: &LayerShape, wm: &WaveModel) -> Result<f64> {
        let planted = self.kernel(key)?;
        let wm = self.occupancy(planted, wm);
        let per_wave_blocks = wm.blocks_per_wave() as f64;
        let (waves, dim, work_per_wave) = match shape {
            LayerShape::MatMul(s) if key.family.is_matmul_like() => {
                s.validate()?;
                let waves = wave_count(s, key, &wm)?;
                let work = 2.0 * key.tile_m as f64 * key.tile_n as f64 * s.k as f64
                    / key.split_k as f64
                    * per_wave_blocks;
                (waves, s.k, work)
            }
            LayerShape::Rows(r) if key.family.is_row_generic() => {
                let waves = row_wave_count(r, key, &wm)?;
                let work = 2.0 * key.tile_m as f64 * r.dim as f64 / key.split_k.max(1) as f64
                    * per_wave_blocks;
                (waves, r.dim, work)
            }
            _ => {
                return Err(Error::invalid(
                    "synthetic device",
                    format!("shape does not fit kernel {key}"),
                ))
            }
        };
        let thr = planted.curve.eval(dim as f64);
        Ok(waves as f64 * work_per_wave / (thr * 1e3))
    }

    fn noise_stream(&self, key: &KernelKey, shape: &LayerShape) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.noise_seed.to_be_bytes());
        h.update(key.to_string().as_bytes());
        h.update(serde_json::to_vec(shape).expect("shape serializes"));
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// Mean multiplicative noise factor over `reps` draws of the keyed
    /// stream; exactly 1 when the device is noiseless.
    pub fn noise_factor(&self, key: &KernelKey, shape: &LayerShape, reps: u32) -> f64 {
        if self.noise_rel_sigma == 0.0 || reps == 0 {
            return 1.0;
        }
        let sigma = self.noise_rel_sigma;
        let normal = Normal::new(-0.5 * sigma * sigma, sigma).expect("finite sigma");
        let mut rng = self.noise_stream(key, shape);
        (0..reps).map(|_| normal.sample(&mut rng).exp()).sum::<f64>() / reps as f64
    }

    /// Ground-truth duration of one launch (one noise draw).
    pub fn true_duration(&self, key: &KernelKey, shape: &MatMulShape, wm: &WaveModel) -> Result<f64> {
        let s = LayerShape::MatMul(*shape);
        Ok(self.ideal_duration(key, &s, wm)? * self.noise_factor(key, &s, 1))
    }

    pub fn true_duration_rows(&self, key: &KernelKey, shape: &RowShape, wm: &WaveModel) -> Result<f64> {
        let s = LayerShape::Rows(*shape);
        Ok(self.ideal_duration(key, &s, wm)? * self.noise_factor(key, &s, 1))
    }

    /// Mean over `reps` noisy launches.
    pub fn measured_duration(
        &self,
        key: &KernelKey,
        shape: &LayerShape,
        wm: &WaveModel,
        reps: u32,
    ) -> Result<f64> {
        Ok(self.ideal_duration(key, shape, wm)? * self.noise_factor(key, shape, reps))
    }

    /// The kernel the device's own heuristic would pick: the fastest
    /// registered key of the triple, ties to the smaller key.
    pub fn heuristic_key(
        &self,
        family: &Family,
        dtype: DType,
        transpose: TransposeMode,
        shape: &LayerShape,
        wm: &WaveModel,
    ) -> Result<KernelKey> {
        let mut best: Option<(f64, &KernelKey)> = None;
        for k in &self.kernels {
            if &k.key.family != family || k.key.dtype != dtype || k.key.transpose_mode != transpose {
                continue;
            }
            let t = self.ideal_duration(&k.key, shape, wm)?;
            let better = match best {
                None => true,
                Some((bt, bk)) => t < bt || (t == bt && &k.key < bk),
            };
            if better {
                best = Some((t, &k.key));
            }
        }
        best.map(|(_, k)| k.clone())
            .ok_or_else(|| Error::NoConfigAvailable {
                family: family.to_string(),
                dtype: dtype.to_string(),
                transpose: transpose.to_string(),
            })
    }

    pub fn utility(&self, name: &str, dtype: DType) -> Option<&PlantedUtility> {
        self.utilities
            .iter()
            .find(|u| u.kernel_name.eq_ignore_ascii_case(name) && u.dtype == dtype)
    }

    /// Noise-free latency of a whole layer as the device would run it.
    pub fn layer_truth(&self, layer: &LayerSpec, wm: &WaveModel) -> Result<f64> {
        if let Family::Utility(name) = &layer.family {
            let f = layer.features.ok_or_else(|| Error::UnresolvedLayer {
                layer_id: layer.layer_id.clone(),
                device: None,
                reason: "utility layer without features".into(),
            })?;
            let u = self.utility(name, layer.dtype).ok_or_else(|| Error::UnresolvedLayer {
                layer_id: layer.layer_id.clone(),
                device: None,
                reason: format!("no planted utility {name}"),
            })?;
            return Ok(u.latency(&f));
        }
        let shape = layer.shape.clone().ok_or_else(|| Error::UnresolvedLayer {
            layer_id: layer.layer_id.clone(),
            device: None,
            reason: "layer without shape".into(),
        })?;
        let key = match &layer.resolved_key {
            Some(k) => k.clone(),
            None => self.heuristic_key(&layer.family, layer.dtype, layer.transpose(), &shape, wm)?,
        };
        self.ideal_duration(&key, &shape, wm)
    }

    pub fn model_truth(&self, graph: &ModelGraph, wm: &WaveModel) -> Result<f64> {
        graph
            .layers
            .iter()
            .try_fold(0.0, |acc, l| Ok(acc + self.layer_truth(l, wm)?))
    }
}

fn reference_shape(key: &KernelKey, wm: &WaveModel, dim: u64, target_waves: u64) -> LayerShape {
    let per_wave = wm.blocks_per_wave();
    if key.family.is_row_generic() {
        LayerShape::Rows(RowShape {
            rows: key.tile_m as u64 * per_wave * target_waves,
            dim,
        })
    } else {
        LayerShape::MatMul(MatMulShape::new(
            1,
            key.tile_m as u64 * per_wave * target_waves,
            key.tile_n as u64,
            dim,
        ))
    }
}

fn config_shape(shape: &LayerShape) -> MatMulShape {
    match shape {
        LayerShape::MatMul(s) => *s,
        LayerShape::Rows(r) => MatMulShape::new(1, r.rows, 1, r.dim),
    }
}

/// Random but realistic proxy metrics for an element-wise kernel.
fn utility_features(rng: &mut ChaCha8Rng, dtype: DType) -> MemBoundFeatures {
    let elems = 10f64.powf(rng.random_range(4.0..8.0)).round();
    let size = dtype.size_bytes() as f64;
    let loaded = elems * size * rng.random_range(1.0..3.0);
    let stored = elems * size * rng.random_range(0.5..1.5);
    MemBoundFeatures {
        flops: elems * rng.random_range(1.0..10.0),
        int_ops: elems * rng.random_range(0.5..4.0),
        bytes_loaded: loaded.round(),
        bytes_stored: stored.round(),
        total_bytes_accessed: ((loaded + stored) * rng.random_range(0.8..1.2)).round(),
    }
}

/// Measures `device` according to `plan` and packages the results as a
/// schema-valid dataset.
pub fn emit_fixture(device: &SyntheticDevice, plan: &SamplingPlan) -> Result<Dataset> {
    device.validate()?;
    if plan.dims.len() < 2 || plan.dims.windows(2).any(|w| w[1] <= w[0]) || plan.dims[0] == 0 {
        return Err(Error::invalid(
            "sampling plan",
            "dims must be >= 2 strictly ascending positive values",
        ));
    }
    if plan.target_waves == 0 || plan.repetitions == 0 {
        return Err(Error::invalid(
            "sampling plan",
            "target_waves and repetitions must be >= 1",
        ));
    }
    let base_wm = device.wave_model();
    let ref_dim = *plan.dims.last().expect("checked non-empty");
    let mut ds = Dataset::new(device.profile.clone());

    for planted in &device.kernels {
        let key = &planted.key;
        if key.family.is_utility() {
            continue;
        }
        let wm = device.occupancy(planted, &base_wm);
        let mut samples = Vec::with_capacity(plan.dims.len());
        let mut ref_duration = 0.0;
        let mut ref_waves = 0;
        for &dim in &plan.dims {
            let shape = reference_shape(key, &wm, dim, plan.target_waves);
            let duration = device.measured_duration(key, &shape, &wm, plan.repetitions)?;
            let (waves, work) = match &shape {
                LayerShape::MatMul(s) => (
                    wave_count(s, key, &wm)?,
                    2.0 * key.tile_m as f64 * key.tile_n as f64 * dim as f64 / key.split_k as f64
                        * wm.blocks_per_wave() as f64,
                ),
                LayerShape::Rows(r) => (
                    row_wave_count(r, key, &wm)?,
                    2.0 * key.tile_m as f64 * dim as f64 / key.split_k.max(1) as f64
                        * wm.blocks_per_wave() as f64,
                ),
            };
            samples.push(CurveSample {
                dim_value: dim,
                throughput_gflops: waves as f64 * work / (duration * 1e3),
            });
            if dim == ref_dim {
                ref_duration = duration;
                ref_waves = waves;
            }
        }
        let curve = ThroughputCurve {
            kernel: key.clone(),
            varying_dim_name: key.family.varying_dim_name().to_string(),
            device_id: device.profile.device_id.clone(),
            samples,
            ref_dim_value: ref_dim,
            ref_duration_us: ref_duration,
            ref_waves,
            blocks_per_sm: planted.blocks_per_sm,
        };
        curve.validate()?;
        ds.curves.insert(key.clone(), curve);
    }

    let mut triples: Vec<(Family, DType, TransposeMode)> = device
        .kernels
        .iter()
        .filter(|k| !k.key.family.is_utility())
        .map(|k| (k.key.family.clone(), k.key.dtype, k.key.transpose_mode))
        .collect();
    triples.sort();
    triples.dedup();
    for (family, dtype, transpose) in triples {
        let shapes: Vec<LayerShape> = if family.is_row_generic() {
            plan.row_config_shapes.iter().copied().map(LayerShape::Rows).collect()
        } else {
            plan.config_shapes.iter().copied().map(LayerShape::MatMul).collect()
        };
        for shape in shapes {
            let chosen = device.heuristic_key(&family, dtype, transpose, &shape, &base_wm)?;
            ds.config_map.push(ConfigRecord {
                family: family.clone(),
                dtype,
                transpose_mode: transpose,
                shape: config_shape(&shape),
                chosen_key: chosen,
            });
        }
    }

    for u in &device.utilities {
        let mut h = Sha256::new();
        h.update(device.noise_seed.to_be_bytes());
        h.update(u.kernel_name.as_bytes());
        h.update(u.dtype.as_str().as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&h.finalize());
        let mut rng = ChaCha8Rng::from_seed(seed);
        let normal = (device.noise_rel_sigma > 0.0).then(|| {
            let s = device.noise_rel_sigma;
            Normal::new(-0.5 * s * s, s).expect("finite sigma")
        });
        for _ in 0..plan.membound_samples {
            let features = utility_features(&mut rng, u.dtype);
            let noise = normal.map(|n| n.sample(&mut rng).exp()).unwrap_or(1.0);
            ds.membound_records.push(MemBoundRecord {
                kernel_name: u.kernel_name.clone(),
                dtype: u.dtype,
                features,
                latency_us: u.latency(&features) * noise,
            });
        }
    }
    ds.canonicalize();
    ds.validate()?;
    Ok(ds)
}

/// Table-I-like profile of a 30-SM laptop GPU.
pub fn laptop_profile() -> DeviceProfile {
    DeviceProfile {
        device_id: "synthetic-3060m".into(),
        max_freq_ghz: 2.09,
        fp32_tflops: 16.05,
        bf16_tflops: Some(32.10),
        dram_bw_gbs: 336.0,
        mem_gb: 6.0,
        l2_mb: 3.0,
        sm_count: 30,
        cuda_cores: 3840,
        power_w: 130.0,
        collection_freq_mhz: 1500.0,
    }
}

const TILES: [(u32, u32); 8] = [
    (128, 128),
    (128, 64),
    (64, 128),
    (64, 64),
    (256, 128),
    (128, 256),
    (32, 64),
    (64, 32),
];

fn gemm_key(family: Family, dtype: DType, library: Library, algo: i64, tile: (u32, u32), split_k: u32, stages: i64) -> KernelKey {
    let transpose_mode = family.default_transpose();
    KernelKey {
        family,
        dtype,
        library,
        algorithm_id: algo,
        tile_m: tile.0,
        tile_n: tile.1,
        split_k,
        swizzle: (algo % 2) * 2,
        reduction_scheme: if split_k > 1 { 1 } else { 0 },
        stages,
        transpose_mode,
    }
}

/// Deterministic planted curve for the `i`-th kernel of a preset.
fn planted_curve(i: usize, peak_lo: f64, peak_hi: f64) -> RationalParams {
    let halves = [48.0, 96.0, 160.0, 256.0, 384.0, 512.0, 768.0, 1024.0];
    let offsets = [0.0, 4.0, 8.0, 16.0, 32.0];
    let t = ((i * 37) % 101) as f64 / 100.0;
    RationalParams::saturating(
        peak_lo + (peak_hi - peak_lo) * t,
        offsets[(i * 3) % offsets.len()],
        halves[(i * 5) % halves.len()],
    )
}

fn preset_utilities(profile: &DeviceProfile, dtypes: &[DType]) -> Vec<PlantedUtility> {
    // µs per byte at the device's DRAM bandwidth.
    let per_byte = 1.0 / (profile.dram_bw_gbs * 1e3);
    let names = ["add", "dropout", "gelu", "mul", "relu", "softmax", "pooling"];
    let mut out = Vec::new();
    for &dtype in dtypes {
        for (i, name) in names.iter().enumerate() {
            let f = i as f64;
            out.push(PlantedUtility {
                kernel_name: (*name).to_string(),
                dtype,
                weights: [
                    2e-7 * (1.0 + f),
                    1e-7 * (1.0 + 0.5 * f),
                    per_byte * (0.30 + 0.05 * f),
                    per_byte * (0.40 + 0.03 * f),
                    per_byte * (0.50 + 0.04 * f),
                ],
                intercept: 2.5 + 0.25 * f,
            });
        }
    }
    out
}

fn pow2_shapes(batches: &[u64]) -> Vec<MatMulShape> {
    let dims = SamplingPlan::powers_of_two(6, 12);
    let mut out = Vec::new();
    for &b in batches {
        for &m in &dims {
            for &n in &dims {
                for &k in &dims {
                    out.push(MatMulShape::new(b, m, n, k));
                }
            }
        }
    }
    out
}

fn default_plan() -> SamplingPlan {
    SamplingPlan {
        dims: SamplingPlan::powers_of_two(5, 13),
        target_waves: 2,
        repetitions: 25,
        config_shapes: pow2_shapes(&[1]),
        row_config_shapes: Vec::new(),
        membound_samples: 64,
    }
}

/// FP32 fixture: 13 GEMM kernels (5 MatMul, 4 Linear, 4 batched MatMul)
/// and seven utility kernels.
pub fn fp32_preset() -> OracleConfig {
    let profile = laptop_profile();
    let mut kernels = Vec::new();
    let spec: [(Family, usize); 3] = [
        (Family::MatMul, 5),
        (Family::Linear, 4),
        (Family::BatchedMatMul, 4),
    ];
    let mut i = 0;
    for (family, count) in spec {
        for (j, &tile) in TILES.iter().enumerate().take(count) {
            let split_k = if j == 3 { 2 } else { 1 };
            kernels.push(PlantedKernel {
                key: gemm_key(family.clone(), DType::Fp32, Library::Cublas, j as i64, tile, split_k, 0),
                curve: planted_curve(i, 4000.0, 9000.0),
                blocks_per_sm: None,
            });
            i += 1;
        }
    }
    let utilities = preset_utilities(&profile, &[DType::Fp32]);
    OracleConfig {
        device: SyntheticDevice {
            profile,
            kernels,
            utilities,
            noise_seed: 0,
            noise_rel_sigma: 0.0,
        },
        plan: default_plan(),
    }
}

/// BF16 fixture: 96 GEMM kernels spread over cuBLAS and CUTLASS variants.
pub fn bf16_preset() -> OracleConfig {
    let profile = laptop_profile();
    let mut kernels = Vec::new();
    let mut i = 0;
    for family in [Family::MatMul, Family::Linear, Family::BatchedMatMul] {
        for library in [Library::Cublas, Library::Cutlass] {
            for (t, tile) in TILES.iter().enumerate() {
                for split_k in [1u32, 2] {
                    kernels.push(PlantedKernel {
                        key: gemm_key(family.clone(), DType::Bf16, library, t as i64, *tile, split_k, 3 + (t as i64 % 3)),
                        curve: planted_curve(i, 12000.0, 28000.0),
                        blocks_per_sm: if t % 4 == 3 { Some(2) } else { None },
                    });
                    i += 1;
                }
            }
        }
    }
    let utilities = preset_utilities(&profile, &[DType::Bf16]);
    OracleConfig {
        device: SyntheticDevice {
            profile,
            kernels,
            utilities,
            noise_seed: 0,
            noise_rel_sigma: 0.0,
        },
        plan: default_plan(),
    }
}

/// Custom compute kernels: Triton GEMM and vector kernels plus fused
/// attention, each with two configurations.
pub fn custom_preset() -> OracleConfig {
    let profile = laptop_profile();
    let mut kernels = Vec::new();
    let mut i = 0;
    for (family, library) in [
        (Family::TritonMM, Library::Triton),
        (Family::TritonVec, Library::Triton),
        (Family::FlashAttention, Library::Custom),
        (Family::CutlassAttention, Library::Cutlass),
    ] {
        for j in 0..2usize {
            let tile = if family.is_row_generic() {
                ([64u32, 128][j], 0)
            } else {
                TILES[j]
            };
            kernels.push(PlantedKernel {
                key: gemm_key(family.clone(), DType::Bf16, library, j as i64, tile, 1, 2),
                curve: planted_curve(i, 3000.0, 15000.0),
                blocks_per_sm: None,
            });
            i += 1;
        }
    }
    let mut plan = default_plan();
    plan.config_shapes = pow2_shapes(&[1]);
    plan.row_config_shapes = SamplingPlan::powers_of_two(8, 16)
        .into_iter()
        .flat_map(|rows| {
            SamplingPlan::powers_of_two(6, 13)
                .into_iter()
                .map(move |dim| RowShape { rows, dim })
        })
        .collect();
    plan.dims = SamplingPlan::powers_of_two(6, 13);
    plan.membound_samples = 0;
    OracleConfig {
        device: SyntheticDevice {
            profile,
            kernels,
            utilities: Vec::new(),
            noise_seed: 0,
            noise_rel_sigma: 0.0,
        },
        plan,
    }
}

pub fn preset(name: &str) -> Result<OracleConfig> {
    match name {
        "fp32" => Ok(fp32_preset()),
        "bf16" => Ok(bf16_preset()),
        "custom" => Ok(custom_preset()),
        other => Err(Error::invalid(
            "oracle preset",
            format!("unknown preset {other:?} (expected fp32, bf16 or custom)"),
        )),
    }
}

/// One transformer block as 8 sequential layers: QKV projection, scores,
/// softmax, context, output projection, MLP up, GeLU, MLP down.
pub fn transformer_block(
    name: &str,
    dtype: DType,
    batch: u64,
    seq: u64,
    hidden: u64,
    heads: u64,
) -> ModelGraph {
    let tokens = batch * seq;
    let head_dim = hidden / heads;
    let size = dtype.size_bytes() as f64;
    let elementwise = |elems: f64, inputs: f64, flops: f64| MemBoundFeatures {
        flops: elems * flops,
        int_ops: elems * 2.0,
        bytes_loaded: elems * size * inputs,
        bytes_stored: elems * size,
        total_bytes_accessed: elems * size * (inputs + 1.0),
    };
    let gemm = |id: &str, family: Family, b: u64, m: u64, n: u64, k: u64| LayerSpec {
        layer_id: format!("{name}.{id}"),
        family,
        dtype,
        shape: Some(LayerShape::MatMul(MatMulShape::new(b, m, n, k))),
        features: None,
        transpose_mode: None,
        resolved_key: None,
    };
    let util = |id: &str, kernel: &str, f: MemBoundFeatures| LayerSpec {
        layer_id: format!("{name}.{id}"),
        family: Family::Utility(kernel.to_string()),
        dtype,
        shape: None,
        features: Some(f),
        transpose_mode: None,
        resolved_key: None,
    };
    let scores = (batch * heads * seq * seq) as f64;
    ModelGraph {
        model_name: name.to_string(),
        batch_size: batch,
        layers: vec![
            gemm("qkv", Family::Linear, 1, tokens, 3 * hidden, hidden),
            gemm("scores", Family::BatchedMatMul, batch * heads, seq, seq, head_dim),
            util("softmax", "softmax", elementwise(scores, 1.0, 5.0)),
            gemm("context", Family::BatchedMatMul, batch * heads, seq, head_dim, seq),
            gemm("proj", Family::Linear, 1, tokens, hidden, hidden),
            gemm("fc1", Family::Linear, 1, tokens, 4 * hidden, hidden),
            util("gelu", "gelu", elementwise((tokens * 4 * hidden) as f64, 1.0, 8.0)),
            gemm("fc2", Family::Linear, 1, tokens, hidden, 4 * hidden),
        ],
    }
}

/// Per-kernel planted parameters keyed for quick lookup in tests.
pub fn planted_map(device: &SyntheticDevice) -> BTreeMap<KernelKey, RationalParams> {
    device
        .kernels
        .iter()
        .map(|k| (k.key.clone(), k.curve))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_have_expected_cardinality() {
        let fp32 = fp32_preset();
        fp32.device.validate().unwrap();
        assert_eq!(fp32.device.kernels.len(), 13);
        let bf16 = bf16_preset();
        bf16.device.validate().unwrap();
        assert_eq!(bf16.device.kernels.len(), 96);
        custom_preset().device.validate().unwrap();
    }

    #[test]
    fn single_wave_duration_is_work_over_throughput() {
        let cfg = fp32_preset();
        let dev = &cfg.device;
        let wm = dev.wave_model();
        let k = dev.kernels[0].key.clone();
        let shape = MatMulShape::new(1, k.tile_m as u64, k.tile_n as u64, 256);
        let t = dev.true_duration(&k, &shape, &wm).unwrap();
        let work = 2.0 * k.tile_m as f64 * k.tile_n as f64 * 256.0 * wm.blocks_per_wave() as f64;
        let expected = work / (dev.kernels[0].curve.eval(256.0) * 1e3);
        assert_eq!(t, expected);
    }

    #[test]
    fn duration_doubles_with_waves() {
        let cfg = fp32_preset();
        let dev = &cfg.device;
        let wm = dev.wave_model();
        let k = dev.kernels[0].key.clone();
        let per_wave = wm.blocks_per_wave();
        let one = MatMulShape::new(1, k.tile_m as u64 * per_wave, k.tile_n as u64, 512);
        let two = MatMulShape { batch: 2, ..one };
        let t1 = dev.true_duration(&k, &one, &wm).unwrap();
        let t2 = dev.true_duration(&k, &two, &wm).unwrap();
        assert_eq!(t2, 2.0 * t1);
    }

    #[test]
    fn noise_is_deterministic_and_keyed() {
        let mut cfg = fp32_preset();
        cfg.device.noise_rel_sigma = 0.05;
        cfg.device.noise_seed = 11;
        let dev = &cfg.device;
        let wm = dev.wave_model();
        let k = dev.kernels[1].key.clone();
        let s = MatMulShape::new(1, 512, 512, 777);
        let a = dev.true_duration(&k, &s, &wm).unwrap();
        let b = dev.true_duration(&k, &s, &wm).unwrap();
        assert_eq!(a, b);
        let other = dev.true_duration(&k, &MatMulShape { k: 778, ..s }, &wm).unwrap();
        let ideal_ratio = dev.ideal_duration(&k, &LayerShape::MatMul(s), &wm).unwrap() / a;
        assert_ne!(ideal_ratio, 1.0);
        assert!(other > 0.0);
    }

    #[test]
    fn unknown_kernel() {
        let cfg = fp32_preset();
        let mut k = cfg.device.kernels[0].key.clone();
        k.algorithm_id = 999;
        let wm = cfg.device.wave_model();
        assert!(matches!(
            cfg.device.true_duration(&k, &MatMulShape::new(1, 64, 64, 64), &wm),
            Err(Error::UnknownKernel { .. })
        ));
    }

    #[test]
    fn transformer_block_has_eight_layers() {
        let g = transformer_block("blk", DType::Fp32, 2, 128, 768, 12);
        assert_eq!(g.layers.len(), 8);
        g.validate().unwrap();
    }
}
