//! Shared domain types: devices, kernel identities, shapes, throughput curves
//! and the per-layer model graph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Static hardware descriptors of a GPU plus the clock it was profiled at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub max_freq_ghz: f64,
    pub fp32_tflops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bf16_tflops: Option<f64>,
    pub dram_bw_gbs: f64,
    pub mem_gb: f64,
    pub l2_mb: f64,
    pub sm_count: u32,
    pub cuda_cores: u32,
    pub power_w: f64,
    pub collection_freq_mhz: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("max_freq_ghz", self.max_freq_ghz),
            ("fp32_tflops", self.fp32_tflops),
            ("dram_bw_gbs", self.dram_bw_gbs),
            ("mem_gb", self.mem_gb),
            ("l2_mb", self.l2_mb),
            ("power_w", self.power_w),
            ("collection_freq_mhz", self.collection_freq_mhz),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    format!("device {}", self.device_id),
                    format!("{name} must be finite and > 0, got {v}"),
                ));
            }
        }
        if let Some(v) = self.bf16_tflops {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    format!("device {}", self.device_id),
                    format!("bf16_tflops must be finite and > 0 when present, got {v}"),
                ));
            }
        }
        if self.sm_count == 0 || self.cuda_cores == 0 {
            return Err(Error::invalid(
                format!("device {}", self.device_id),
                "sm_count and cuda_cores must be >= 1",
            ));
        }
        if self.device_id.is_empty() {
            return Err(Error::invalid("device", "device_id must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[serde(alias = "FP32")]
    Fp32,
    #[serde(alias = "BF16")]
    Bf16,
}

impl DType {
    pub fn size_bytes(self) -> u64 {
        match self {
            DType::Fp32 => 4,
            DType::Bf16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::Fp32 => "fp32",
            DType::Bf16 => "bf16",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" => Ok(DType::Fp32),
            "bf16" => Ok(DType::Bf16),
            other => Err(Error::invalid("dtype", format!("unknown dtype {other:?}"))),
        }
    }
}

/// Operation family of a kernel. Anything that is not one of the compute
/// families is a memory-bound utility kernel identified by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    MatMul,
    BatchedMatMul,
    Linear,
    TritonMM,
    TritonVec,
    FlashAttention,
    CutlassAttention,
    Utility(String),
}

impl Family {
    pub fn as_str(&self) -> &str {
        match self {
            Family::MatMul => "matmul",
            Family::BatchedMatMul => "batched_matmul",
            Family::Linear => "linear",
            Family::TritonMM => "triton_mm",
            Family::TritonVec => "triton_vec",
            Family::FlashAttention => "flash_attention",
            Family::CutlassAttention => "cutlass_attention",
            Family::Utility(name) => name,
        }
    }

    pub fn is_utility(&self) -> bool {
        matches!(self, Family::Utility(_))
    }

    /// Families whose block count follows the output-tile GEMM formula.
    pub fn is_matmul_like(&self) -> bool {
        matches!(
            self,
            Family::MatMul | Family::BatchedMatMul | Family::Linear | Family::TritonMM
        )
    }

    /// Families predicted from a row count and one varying dimension.
    pub fn is_row_generic(&self) -> bool {
        matches!(
            self,
            Family::TritonVec | Family::FlashAttention | Family::CutlassAttention
        )
    }

    /// Transpose mode a framework uses for this family unless told otherwise.
    pub fn default_transpose(&self) -> TransposeMode {
        match self {
            Family::Linear => TransposeMode::Tn,
            _ => TransposeMode::Nn,
        }
    }

    /// Name of the dimension a throughput curve of this family varies.
    pub fn varying_dim_name(&self) -> &'static str {
        match self {
            Family::TritonVec => "length",
            Family::FlashAttention | Family::CutlassAttention => "seq_len",
            Family::Utility(_) => "",
            _ => "K",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "matmul" | "mm" => Family::MatMul,
            "batched_matmul" | "bmm" => Family::BatchedMatMul,
            "linear" => Family::Linear,
            "triton_mm" => Family::TritonMM,
            "triton_vec" => Family::TritonVec,
            "flash_attention" => Family::FlashAttention,
            "cutlass_attention" => Family::CutlassAttention,
            "" => return Err(Error::invalid("family", "family name must not be empty")),
            _ => Family::Utility(lower),
        })
    }
}

impl Serialize for Family {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Library {
    #[serde(alias = "cuBLAS")]
    Cublas,
    #[serde(alias = "CUTLASS")]
    Cutlass,
    #[serde(alias = "Triton")]
    Triton,
    #[serde(alias = "Custom")]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransposeMode {
    #[serde(alias = "NN")]
    Nn,
    #[serde(alias = "TN")]
    Tn,
    #[serde(alias = "NT")]
    Nt,
    #[serde(alias = "TT")]
    Tt,
}

impl TransposeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransposeMode::Nn => "nn",
            TransposeMode::Tn => "tn",
            TransposeMode::Nt => "nt",
            TransposeMode::Tt => "tt",
        }
    }
}

impl fmt::Display for TransposeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransposeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(TransposeMode::Nn),
            "tn" => Ok(TransposeMode::Tn),
            "nt" => Ok(TransposeMode::Nt),
            "tt" => Ok(TransposeMode::Tt),
            other => Err(Error::invalid(
                "transpose_mode",
                format!("unknown transpose mode {other:?}"),
            )),
        }
    }
}

fn one() -> u32 {
    1
}

/// Identity of a distinct kernel. Two launches share a key only when every
/// configuration field matches; predictions never mix data across keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelKey {
    pub family: Family,
    pub dtype: DType,
    pub library: Library,
    pub algorithm_id: i64,
    pub tile_m: u32,
    pub tile_n: u32,
    #[serde(default = "one")]
    pub split_k: u32,
    #[serde(default)]
    pub swizzle: i64,
    #[serde(default)]
    pub reduction_scheme: i64,
    #[serde(default)]
    pub stages: i64,
    pub transpose_mode: TransposeMode,
}

impl KernelKey {
    /// Degenerate key for a memory-bound utility kernel.
    pub fn utility(name: &str, dtype: DType) -> Self {
        KernelKey {
            family: Family::Utility(name.to_ascii_lowercase()),
            dtype,
            library: Library::Custom,
            algorithm_id: 0,
            tile_m: 0,
            tile_n: 0,
            split_k: 1,
            swizzle: 0,
            reduction_scheme: 0,
            stages: 0,
            transpose_mode: TransposeMode::Nn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.is_utility() {
            return Ok(());
        }
        if self.tile_m == 0 || self.split_k == 0 {
            return Err(Error::InvalidTile { key: self.to_string() });
        }
        if self.family.is_matmul_like() && self.tile_n == 0 {
            return Err(Error::InvalidTile { key: self.to_string() });
        }
        Ok(())
    }
}

impl fmt::Display for KernelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{:?}/algo{}/{}x{}/sk{}/sw{}/rs{}/st{}/{}",
            self.family,
            self.dtype,
            self.library,
            self.algorithm_id,
            self.tile_m,
            self.tile_n,
            self.split_k,
            self.swizzle,
            self.reduction_scheme,
            self.stages,
            self.transpose_mode
        )
    }
}

/// Dimensions of a (batched) GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatMulShape {
    #[serde(default = "one_u64")]
    pub batch: u64,
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

fn one_u64() -> u64 {
    1
}

impl MatMulShape {
    pub fn new(batch: u64, m: u64, n: u64, k: u64) -> Self {
        MatMulShape { batch, m, n, k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::invalid(
                "shape",
                format!("all dimensions must be >= 1, got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// Dense GEMM FLOP count, `2·batch·m·n·k`.
pub fn flop_count(shape: &MatMulShape) -> f64 {
    2.0 * shape.batch as f64 * shape.m as f64 * shape.n as f64 * shape.k as f64
}

/// One point on a throughput curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub dim_value: u64,
    pub throughput_gflops: f64,
}

/// Throughput sampled along one varying dimension for a single kernel at a
/// fixed wave count, plus the measured duration at the reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputCurve {
    pub kernel: KernelKey,
    pub varying_dim_name: String,
    pub device_id: String,
    pub samples: Vec<CurveSample>,
    pub ref_dim_value: u64,
    pub ref_duration_us: f64,
    pub ref_waves: u64,
    /// Resident blocks per SM for this kernel; 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_per_sm: Option<u32>,
}

impl ThroughputCurve {
    pub fn validate(&self) -> Result<()> {
        let loc = || format!("curve {}", self.kernel);
        self.kernel.validate()?;
        if self.samples.len() < 2 {
            return Err(Error::invalid(loc(), "at least 2 samples required"));
        }
        for w in self.samples.windows(2) {
            if w[1].dim_value <= w[0].dim_value {
                return Err(Error::invalid(
                    loc(),
                    format!(
                        "samples must be strictly ascending in {}: {} then {}",
                        self.varying_dim_name, w[0].dim_value, w[1].dim_value
                    ),
                ));
            }
        }
        if let Some(s) = self
            .samples
            .iter()
            .find(|s| s.dim_value == 0 || !(s.throughput_gflops.is_finite() && s.throughput_gflops > 0.0))
        {
            return Err(Error::invalid(
                loc(),
                format!(
                    "sample at {} has non-positive dimension or throughput {}",
                    s.dim_value, s.throughput_gflops
                ),
            ));
        }
        let last = self.samples.last().map(|s| s.dim_value).unwrap_or_default();
        if self.ref_dim_value != last {
            return Err(Error::invalid(
                loc(),
                format!(
                    "ref_dim_value {} must equal the largest sample {}",
                    self.ref_dim_value, last
                ),
            ));
        }
        if !(self.ref_duration_us.is_finite() && self.ref_duration_us > 0.0) {
            return Err(Error::invalid(loc(), "ref_duration_us must be finite and > 0"));
        }
        if self.ref_waves == 0 {
            return Err(Error::invalid(loc(), "ref_waves must be >= 1"));
        }
        if self.blocks_per_sm == Some(0) {
            return Err(Error::invalid(loc(), "blocks_per_sm must be >= 1"));
        }
        Ok(())
    }

    pub fn min_dim(&self) -> u64 {
        self.samples[0].dim_value
    }

    /// Throughput at the reference (largest) sample.
    pub fn ref_throughput(&self) -> f64 {
        self.samples[self.samples.len() - 1].throughput_gflops
    }
}

/// Proxy metrics of a memory-bound kernel launch. Field order is the
/// regression feature order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MemBoundFeatures {
    pub flops: f64,
    pub int_ops: f64,
    pub bytes_loaded: f64,
    pub bytes_stored: f64,
    pub total_bytes_accessed: f64,
}

impl MemBoundFeatures {
    pub const LEN: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.flops,
            self.int_ops,
            self.bytes_loaded,
            self.bytes_stored,
            self.total_bytes_accessed,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        MemBoundFeatures {
            flops: v[0],
            int_ops: v[1],
            bytes_loaded: v[2],
            bytes_stored: v[3],
            total_bytes_accessed: v[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "features",
                format!("features must be finite and non-negative: {self:?}"),
            ));
        }
        Ok(())
    }
}

/// Launch dimensions of a row-parallel kernel (vector ops, attention):
/// `rows` independent rows split over blocks, each row spanning `dim`
/// elements of the varying dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowShape {
    pub rows: u64,
    pub dim: u64,
}

/// Input of a single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerShape {
    MatMul(MatMulShape),
    Rows(RowShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: String,
    pub family: Family,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<LayerShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<MemBoundFeatures>,
    /// Overrides the family's default transpose mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transpose_mode: Option<TransposeMode>,
    /// Pinned kernel; when absent the key is resolved from the config map.
    #[serde(default, rename = "kernel", skip_serializing_if = "Option::is_none")]
    pub resolved_key: Option<KernelKey>,
}

impl LayerSpec {
    pub fn transpose(&self) -> TransposeMode {
        self.transpose_mode
            .unwrap_or_else(|| self.family.default_transpose())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub model_name: String,
    pub batch_size: u64,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn validate(&self) -> Result<()> {
        let loc = || format!("model {}", self.model_name);
        if self.layers.is_empty() {
            return Err(Error::invalid(loc(), "graph has no layers"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(loc(), "batch_size must be >= 1"));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if !seen.insert(layer.layer_id.as_str()) {
                return Err(Error::invalid(
                    format!("layers[{i}]"),
                    format!("duplicate layer_id {:?}", layer.layer_id),
                ));
            }
            let loc = || format!("layers[{i}] ({})", layer.layer_id);
            match (&layer.shape, &layer.features) {
                (None, None) => return Err(Error::invalid(loc(), "layer needs \"shape\" or \"features\"")),
                (Some(LayerShape::MatMul(s)), _) => {
                    s.validate().map_err(|e| Error::invalid(loc(), e.to_string()))?
                }
                (Some(LayerShape::Rows(r)), _) if r.rows == 0 || r.dim == 0 => {
                    return Err(Error::invalid(loc(), "rows and dim must be >= 1"))
                }
                _ => {}
            }
            if let Some(f) = &layer.features {
                f.validate().map_err(|e| Error::invalid(loc(), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Appends `other`'s layers after this graph's layers.
    pub fn concat(&self, other: &ModelGraph) -> ModelGraph {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        ModelGraph {
            model_name: format!("{}+{}", self.model_name, other.model_name),
            batch_size: self.batch_size,
            layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeFlag {
    InRange,
    BelowRange,
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigMatch {
    /// Key supplied by the caller.
    Given,
    Exact,
    /// Nearest recorded shape; the key is an approximation.
    Nearest,
    /// Only curve available for the family and dtype.
    SoleCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeBreakdown {
    pub base_duration_us: f64,
    pub interpolated_throughput: f64,
    pub ref_throughput: f64,
    pub waves: u64,
    pub ref_waves: u64,
    /// `waves / ref_waves`; latency scales linearly in wave count.
    pub wave_scale: f64,
    pub range: RangeFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_match: Option<ConfigMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemBoundBreakdown {
    pub raw_latency_us: f64,
    pub floor_us: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Breakdown {
    Compute(ComputeBreakdown),
    MemBound(MemBoundBreakdown),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub latency_us: f64,
    pub kernel: KernelKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Breakdown>,
}

impl Prediction {
    pub fn compute_breakdown(&self) -> Option<&ComputeBreakdown> {
        match &self.components {
            Some(Breakdown::Compute(c)) => Some(c),
            _ => None,
        }
    }
}
