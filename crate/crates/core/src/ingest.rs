//! Reading, validating, writing and merging dataset and model-graph files.
//!
//! Every error carries a locator: the file, plus either a JSON pointer (for
//! schema errors) or the offending record (for invariant violations).
//! Unknown fields are accepted and reported through `log::warn!`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::membound::MemBoundModel;
use crate::types::{
    DType, DeviceProfile, Family, KernelKey, MatMulShape, MemBoundFeatures, ModelGraph,
    ThroughputCurve, TransposeMode,
};

pub const SCHEMA_VERSION: &str = "1";

/// One replayed answer of the vendor configuration heuristic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub family: Family,
    pub dtype: DType,
    pub transpose_mode: TransposeMode,
    pub shape: MatMulShape,
    pub chosen_key: KernelKey,
}

/// A profiled launch of a memory-bound kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemBoundRecord {
    pub kernel_name: String,
    pub dtype: DType,
    pub features: MemBoundFeatures,
    pub latency_us: f64,
}

impl MemBoundRecord {
    fn total_cmp(&self, other: &Self) -> Ordering {
        self.kernel_name
            .cmp(&other.kernel_name)
            .then(self.dtype.cmp(&other.dtype))
            .then_with(|| {
                let a = self.features.to_array();
                let b = other.features.to_array();
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then(self.latency_us.total_cmp(&other.latency_us))
    }
}

/// Everything profiled on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema_version: String,
    pub device: DeviceProfile,
    pub curves: BTreeMap<KernelKey, ThroughputCurve>,
    pub config_map: Vec<ConfigRecord>,
    pub membound_records: Vec<MemBoundRecord>,
    pub membound_models: Vec<MemBoundModel>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: String,
    device: DeviceProfile,
    #[serde(default)]
    curves: Vec<ThroughputCurve>,
    #[serde(default)]
    config_map: Vec<ConfigRecord>,
    #[serde(default)]
    membound_records: Vec<MemBoundRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    membound_models: Vec<MemBoundModel>,
}

fn check_schema_version(v: &str, origin: &str) -> Result<()> {
    let major = v.split('.').next().unwrap_or_default();
    if major != SCHEMA_VERSION {
        return Err(Error::Schema {
            path: origin.to_string(),
            pointer: "/schema_version".into(),
            message: format!("unsupported schema version {v:?} (expected major {SCHEMA_VERSION})"),
        });
    }
    Ok(())
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses `text` into `T`, mapping syntax errors to [`Error::Parse`] and
/// type errors to [`Error::Schema`] with a JSON pointer.
fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            message: "empty input".into(),
        });
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut unknown = Vec::new();
    let mut record = |p: serde_ignored::Path| unknown.push(p.to_string());
    let de = serde_ignored::Deserializer::new(&value, &mut record);
    let parsed: T = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: origin.to_string(),
        pointer: json_pointer(e.path()),
        message: e.into_inner().to_string(),
    })?;
    for field in unknown {
        log::warn!("{origin}: ignoring unknown field {field}");
    }
    Ok(parsed)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn new(device: DeviceProfile) -> Self {
        Dataset {
            schema_version: SCHEMA_VERSION.to_string(),
            device,
            curves: BTreeMap::new(),
            config_map: Vec::new(),
            membound_records: Vec::new(),
            membound_models: Vec::new(),
        }
    }

    /// Parses and validates a dataset from JSON text. `origin` names the
    /// source in error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: DatasetFile = parse_json(text, origin)?;
        check_schema_version(&file.schema_version, origin)?;
        let mut curves = BTreeMap::new();
        for (i, curve) in file.curves.into_iter().enumerate() {
            if let Some(prev) = curves.get(&curve.kernel) {
                if prev != &curve {
                    return Err(Error::invalid(
                        format!("{origin}: curves[{i}] ({})", curve.kernel),
                        "duplicate kernel with different measurements",
                    ));
                }
                continue;
            }
            curve.validate().map_err(|e| {
                Error::invalid(format!("{origin}: curves[{i}] ({})", curve.kernel), strip(e))
            })?;
            curves.insert(curve.kernel.clone(), curve);
        }
        let mut ds = Dataset {
            schema_version: file.schema_version,
            device: file.device,
            curves,
            config_map: file.config_map,
            membound_records: file.membound_records,
            membound_models: file.membound_models,
        };
        ds.validate_records(origin)?;
        ds.canonicalize();
        Ok(ds)
    }

    fn validate_records(&self, origin: &str) -> Result<()> {
        self.device
            .validate()
            .map_err(|e| Error::invalid(format!("{origin}: device"), strip(e)))?;
        for (i, curve) in self.curves.values().enumerate() {
            curve.validate().map_err(|e| {
                Error::invalid(format!("{origin}: curves[{i}] ({})", curve.kernel), strip(e))
            })?;
            if curve.device_id != self.device.device_id {
                return Err(Error::invalid(
                    format!("{origin}: curves[{i}] ({})", curve.kernel),
                    format!(
                        "device_id {:?} does not match dataset device {:?}",
                        curve.device_id, self.device.device_id
                    ),
                ));
            }
        }
        for (i, rec) in self.config_map.iter().enumerate() {
            let loc = || format!("{origin}: config_map[{i}]");
            rec.shape
                .validate()
                .map_err(|e| Error::invalid(loc(), strip(e)))?;
            rec.chosen_key
                .validate()
                .map_err(|e| Error::invalid(loc(), strip(e)))?;
            if rec.chosen_key.family != rec.family
                || rec.chosen_key.dtype != rec.dtype
                || rec.chosen_key.transpose_mode != rec.transpose_mode
            {
                return Err(Error::invalid(
                    loc(),
                    format!(
                        "chosen_key {} disagrees with record {}/{}/{}",
                        rec.chosen_key, rec.family, rec.dtype, rec.transpose_mode
                    ),
                ));
            }
        }
        crate::compute::ConfigResolver::new(&self.config_map)
            .map_err(|e| Error::invalid(format!("{origin}: config_map"), strip(e)))?;
        for (i, rec) in self.membound_records.iter().enumerate() {
            let loc = || format!("{origin}: membound_records[{i}] ({})", rec.kernel_name);
            rec.features
                .validate()
                .map_err(|e| Error::invalid(loc(), strip(e)))?;
            if !(rec.latency_us.is_finite() && rec.latency_us > 0.0) {
                return Err(Error::invalid(loc(), "latency_us must be finite and > 0"));
            }
            if rec.kernel_name.is_empty() {
                return Err(Error::invalid(loc(), "kernel_name must not be empty"));
            }
        }
        for (i, model) in self.membound_models.iter().enumerate() {
            model.validate().map_err(|e| {
                Error::invalid(
                    format!("{origin}: membound_models[{i}] ({})", model.kernel_name),
                    strip(e),
                )
            })?;
        }
        Ok(())
    }

    /// Checks every invariant of the dataset and its records.
    pub fn validate(&self) -> Result<()> {
        check_schema_version(&self.schema_version, "dataset")?;
        for (key, curve) in &self.curves {
            if key != &curve.kernel {
                return Err(Error::invalid(
                    format!("curve {key}"),
                    "map key differs from the curve's kernel",
                ));
            }
        }
        self.validate_records("dataset")
    }

    /// Sorts and dedupes the record lists so equal content compares equal.
    pub fn canonicalize(&mut self) {
        self.config_map.sort();
        self.config_map.dedup();
        self.membound_records.sort_by(|a, b| a.total_cmp(b));
        self.membound_records.dedup();
        self.membound_models
            .sort_by(|a, b| (&a.kernel_name, a.dtype).cmp(&(&b.kernel_name, b.dtype)));
    }

    pub fn to_json_string(&self) -> String {
        let file = DatasetFile {
            schema_version: self.schema_version.clone(),
            device: self.device.clone(),
            curves: self.curves.values().cloned().collect(),
            config_map: self.config_map.clone(),
            membound_records: self.membound_records.clone(),
            membound_models: self.membound_models.clone(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.canonicalize();
        let file = DatasetFile {
            schema_version: c.schema_version,
            device: c.device,
            curves: c.curves.into_values().collect(),
            config_map: c.config_map,
            membound_records: c.membound_records,
            membound_models: c.membound_models,
        };
        let bytes = serde_json::to_vec(&file).expect("dataset serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn curve(&self, key: &KernelKey) -> Option<&ThroughputCurve> {
        self.curves.get(key)
    }

    pub fn membound_model(&self, name: &str, dtype: DType) -> Option<&MemBoundModel> {
        self.membound_models
            .iter()
            .find(|m| m.kernel_name.eq_ignore_ascii_case(name) && m.dtype == dtype)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Validation { locator, message } => format!("{locator}: {message}"),
        other => other.to_string(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    Dataset::from_json_str(&read_text(path)?, &path.display().to_string())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = dataset.to_json_string();
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn model_graph_from_str(text: &str, origin: &str) -> Result<ModelGraph> {
    let graph: ModelGraph = parse_json(text, origin)?;
    graph
        .validate()
        .map_err(|e| Error::invalid(format!("{origin}: {}", graph.model_name), strip(e)))?;
    Ok(graph)
}

/// Loads a model graph. Layers keep file order; kernels are resolved later
/// unless a layer pins one explicitly.
pub fn load_model_graph(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    model_graph_from_str(&read_text(path)?, &path.display().to_string())
}

/// Union of two datasets from the same device. Identical duplicates
/// collapse; differing measurements for the same key are a conflict.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.device != b.device {
        return Err(Error::DeviceMismatch {
            left: a.device.device_id.clone(),
            right: b.device.device_id.clone(),
        });
    }
    if a.schema_version != b.schema_version {
        return Err(Error::invalid(
            "merge",
            format!(
                "schema versions differ: {:?} vs {:?}",
                a.schema_version, b.schema_version
            ),
        ));
    }
    let mut out = a.clone();
    for (key, curve) in &b.curves {
        match out.curves.get(key) {
            Some(existing) if existing != curve => {
                return Err(Error::Conflict {
                    key: key.to_string(),
                })
            }
            Some(_) => {}
            None => {
                out.curves.insert(key.clone(), curve.clone());
            }
        }
    }
    out.config_map.extend(b.config_map.iter().cloned());
    out.membound_records
        .extend(b.membound_records.iter().cloned());
    for model in &b.membound_models {
        match out
            .membound_models
            .iter()
            .find(|m| m.kernel_name == model.kernel_name && m.dtype == model.dtype)
        {
            Some(existing) if existing != model => {
                return Err(Error::Conflict {
                    key: format!("membound model {}/{}", model.kernel_name, model.dtype),
                })
            }
            Some(_) => {}
            None => out.membound_models.push(model.clone()),
        }
    }
    out.canonicalize();
    // Same shape mapped to two kernels.
    crate::compute::ConfigResolver::new(&out.config_map).map_err(|e| Error::Conflict {
        key: strip(e),
    })?;
    Ok(out)
}
