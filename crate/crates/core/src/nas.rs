//! Precomputed latency tables for architecture search.
//!
//! A store file holds one fixed-width record per grid point, sorted by the
//! big-endian encoding of its coordinates, so lookup is a binary search over
//! a memory map. See `docs/cache-format.md` for the byte layout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use memmap2::Mmap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::predictor::Predictor;
use crate::types::{DType, Family, LayerShape, MatMulShape, RowShape, TransposeMode};

pub const MAGIC: &[u8; 4] = b"PM2L";
pub const FORMAT_VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;
const SHARD: usize = 1 << 15;

/// Axes a grid may declare for each kind of family.
const MATMUL_AXES: [&str; 4] = ["batch", "k", "m", "n"];
const ROW_AXES: [&str; 2] = ["dim", "rows"];

/// A declared search space: explicit value lists per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: Family,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transpose_mode: Option<TransposeMode>,
    pub axes: BTreeMap<String, Vec<u64>>,
}

impl GridSpec {
    pub fn transpose(&self) -> TransposeMode {
        self.transpose_mode
            .unwrap_or_else(|| self.family.default_transpose())
    }

    fn allowed_axes(&self) -> Result<&'static [&'static str]> {
        if self.family.is_matmul_like() {
            Ok(&MATMUL_AXES)
        } else if self.family.is_row_generic() {
            Ok(&ROW_AXES)
        } else {
            Err(Error::invalid(
                "grid",
                format!("family {} cannot be precomputed", self.family),
            ))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.allowed_axes()?;
        for (name, values) in &self.axes {
            if !allowed.contains(&name.as_str()) {
                return Err(Error::invalid(
                    format!("grid axis {name}"),
                    format!("not an axis of {} (expected one of {allowed:?})", self.family),
                ));
            }
            if values.is_empty() {
                return Err(Error::invalid(format!("grid axis {name}"), "no values"));
            }
            if values.contains(&0) {
                return Err(Error::invalid(format!("grid axis {name}"), "values must be >= 1"));
            }
            let mut sorted = values.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("grid axis {name}"), "duplicate values"));
            }
        }
        for required in allowed {
            if *required != "batch" && !self.axes.contains_key(*required) {
                return Err(Error::invalid("grid", format!("missing axis {required}")));
            }
        }
        Ok(())
    }

    /// Number of grid points, without enumerating them.
    pub fn cardinality(&self) -> u128 {
        self.axes.values().map(|v| v.len() as u128).product()
    }

    pub fn axis_names(&self) -> Vec<String> {
        self.axes.keys().cloned().collect()
    }

    fn sorted_axes(&self) -> Vec<Vec<u64>> {
        self.axes
            .values()
            .map(|v| {
                let mut v = v.clone();
                v.sort_unstable();
                v
            })
            .collect()
    }

    /// sha256 of the grid's canonical form (axes sorted, transpose resolved).
    pub fn fingerprint(&self) -> String {
        let canonical = GridSpec {
            family: self.family.clone(),
            dtype: self.dtype,
            transpose_mode: Some(self.transpose()),
            axes: self
                .axis_names()
                .into_iter()
                .zip(self.sorted_axes())
                .collect(),
        };
        hex::encode(Sha256::digest(
            serde_json::to_vec(&canonical).expect("grid serializes"),
        ))
    }

    /// Layer shape of a point given in axis-name order.
    pub fn shape_of(&self, coords: &[u64]) -> LayerShape {
        let get = |name: &str| {
            self.axes
                .keys()
                .position(|k| k == name)
                .map(|i| coords[i])
        };
        if self.family.is_row_generic() {
            LayerShape::Rows(RowShape {
                rows: get("rows").unwrap_or(1),
                dim: get("dim").unwrap_or(1),
            })
        } else {
            LayerShape::MatMul(MatMulShape::new(
                get("batch").unwrap_or(1),
                get("m").unwrap_or(1),
                get("n").unwrap_or(1),
                get("k").unwrap_or(1),
            ))
        }
    }

    /// Coordinates in axis order from a name → value map.
    pub fn coords_of(&self, point: &BTreeMap<String, u64>) -> Result<Vec<u64>> {
        if let Some(extra) = point.keys().find(|k| !self.axes.contains_key(*k)) {
            return Err(Error::invalid("lookup point", format!("unknown axis {extra}")));
        }
        self.axes
            .keys()
            .map(|k| {
                point
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::invalid("lookup point", format!("missing axis {k}")))
            })
            .collect()
    }
}

fn format_coords(names: &[String], coords: &[u64]) -> String {
    names
        .iter()
        .zip(coords)
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Odometer decode of the `index`-th point, last axis fastest.
fn point_at(axes: &[Vec<u64>], mut index: u128, out: &mut [u64]) {
    for (slot, values) in out.iter_mut().zip(axes).rev() {
        let n = values.len() as u128;
        *slot = values[(index % n) as usize];
        index /= n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub device_id: String,
    pub dataset_fingerprint: String,
    pub grid_fingerprint: String,
    pub entry_count: u64,
    pub skipped: u64,
    pub family: Family,
    pub dtype: DType,
    pub transpose_mode: TransposeMode,
    pub axes: Vec<String>,
}

impl CacheHeader {
    pub fn record_width(&self) -> usize {
        8 * self.axes.len() + 8
    }
}

#[derive(Debug, Clone, Default)]
pub struct PrecomputeOptions {
    /// Leave unresolvable points out of the store instead of failing.
    pub skip_unresolved: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeSummary {
    pub count: u64,
    pub skipped: u64,
    pub elapsed_s: f64,
    pub mean_us_per_prediction: f64,
}

fn encode_record(buf: &mut Vec<u8>, coords: &[u64], latency: f64) {
    for c in coords {
        buf.extend_from_slice(&c.to_be_bytes());
    }
    buf.extend_from_slice(&latency.to_bits().to_be_bytes());
}

fn predict_point(p: &Predictor, grid: &GridSpec, names: &[String], coords: &[u64]) -> Result<f64> {
    let shape = grid.shape_of(coords);
    p.predict_compute_shape(&grid.family, grid.dtype, grid.transpose(), &shape)
        .map(|pr| pr.latency_us)
        .map_err(|e| Error::UnresolvedPoint {
            coords: format_coords(names, coords),
            reason: e.to_string(),
        })
}

/// Predicts every grid point and writes a store file to `out`.
pub fn precompute(
    grid: &GridSpec,
    dataset: &Dataset,
    predictor: &Predictor,
    out: &Path,
    options: &PrecomputeOptions,
) -> Result<PrecomputeSummary> {
    grid.validate()?;
    let pool = match options.jobs {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid("jobs", e.to_string()))?,
        ),
        None => None,
    };
    let start = Instant::now();
    let names = grid.axis_names();
    let axes = grid.sorted_axes();
    let total = grid.cardinality();
    let width = 8 * names.len() + 8;

    // Records go to a temporary body file first, since the header needs the
    // final entry count.
    let body_path = tmp_path(out, "body");
    let body_file = File::create(&body_path).map_err(|e| Error::io(&body_path, e))?;
    let mut body = BufWriter::new(body_file);
    let mut written: u64 = 0;
    let mut skipped: u64 = 0;
    let mut first = 0u128;
    let mut run = || -> Result<()> {
        while first < total {
            let len = (total - first).min(SHARD as u128) as usize;
            let eval = |i: usize| {
                let mut coords = vec![0u64; names.len()];
                point_at(&axes, first + i as u128, &mut coords);
                let r = predict_point(predictor, grid, &names, &coords);
                (coords, r)
            };
            let shard: Vec<(Vec<u64>, Result<f64>)> = match &pool {
                Some(pool) => pool.install(|| (0..len).into_par_iter().map(eval).collect()),
                None => (0..len).into_par_iter().map(eval).collect(),
            };
            let mut buf = Vec::with_capacity(len * width);
            for (coords, r) in shard {
                match r {
                    Ok(lat) => {
                        encode_record(&mut buf, &coords, lat);
                        written += 1;
                    }
                    Err(e) if options.skip_unresolved => {
                        log::warn!("{e}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            body.write_all(&buf).map_err(|e| Error::io(&body_path, e))?;
            first += len as u128;
        }
        body.flush().map_err(|e| Error::io(&body_path, e))
    };
    let result = run();
    drop(body);
    if let Err(e) = result {
        let _ = std::fs::remove_file(&body_path);
        return Err(e);
    }
    let elapsed = start.elapsed().as_secs_f64();

    let header = CacheHeader {
        device_id: dataset.device.device_id.clone(),
        dataset_fingerprint: dataset.fingerprint(),
        grid_fingerprint: grid.fingerprint(),
        entry_count: written,
        skipped,
        family: grid.family.clone(),
        dtype: grid.dtype,
        transpose_mode: grid.transpose(),
        axes: names.clone(),
    };
    let assembled = write_store(out, &header, &body_path);
    let _ = std::fs::remove_file(&body_path);
    assembled?;
    let evaluated = written + skipped;
    Ok(PrecomputeSummary {
        count: written,
        skipped,
        elapsed_s: elapsed,
        mean_us_per_prediction: if evaluated == 0 {
            0.0
        } else {
            elapsed * 1e6 / evaluated as f64
        },
    })
}

fn tmp_path(out: &Path, tag: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{tag}.tmp"));
    out.with_file_name(name)
}

fn write_store(out: &Path, header: &CacheHeader, body_path: &Path) -> Result<()> {
    let tmp = tmp_path(out, "part");
    let write = || -> std::io::Result<()> {
        let header_json = serde_json::to_vec(header).expect("header serializes");
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_be_bytes())?;
        w.write_all(&(header_json.len() as u32).to_be_bytes())?;
        w.write_all(&header_json)?;
        std::io::copy(&mut File::open(body_path)?, &mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, out)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(out, e)
    })
}

/// A memory-mapped store opened for lookup.
#[derive(Debug)]
pub struct CacheStore {
    header: CacheHeader,
    map: Mmap,
    body_offset: usize,
}

impl CacheStore {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        // SAFETY: the store is treated as immutable once written; writers
        // replace it by rename rather than modifying it in place.
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        let corrupt = |m: &str| Error::CorruptCache(format!("{}: {m}", path.display()));
        if map.len() < PREAMBLE || &map[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_be_bytes([map[4], map[5]]);
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let hlen = u32::from_be_bytes([map[6], map[7], map[8], map[9]]) as usize;
        let body_offset = PREAMBLE + hlen;
        if map.len() < body_offset {
            return Err(corrupt("truncated header"));
        }
        let header: CacheHeader = serde_json::from_slice(&map[PREAMBLE..body_offset])
            .map_err(|e| corrupt(&format!("header: {e}")))?;
        let expected = header.entry_count as usize * header.record_width();
        if map.len() - body_offset != expected {
            return Err(corrupt(&format!(
                "expected {expected} record bytes, found {}",
                map.len() - body_offset
            )));
        }
        Ok(CacheStore {
            header,
            map,
            body_offset,
        })
    }

    /// Opens a store and checks it was built from `dataset` (and `grid`,
    /// when given).
    pub fn open_checked(path: &Path, dataset: &Dataset, grid: Option<&GridSpec>) -> Result<Self> {
        let store = Self::open(path)?;
        store.check_fingerprints(&dataset.fingerprint(), grid.map(|g| g.fingerprint()).as_deref())?;
        Ok(store)
    }

    pub fn check_fingerprints(&self, dataset_fp: &str, grid_fp: Option<&str>) -> Result<()> {
        if self.header.dataset_fingerprint != dataset_fp {
            return Err(Error::StaleCache(format!(
                "built from dataset {}, current dataset is {dataset_fp}",
                self.header.dataset_fingerprint
            )));
        }
        if let Some(g) = grid_fp {
            if self.header.grid_fingerprint != g {
                return Err(Error::StaleCache(format!(
                    "built for grid {}, requested grid is {g}",
                    self.header.grid_fingerprint
                )));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.entry_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Latency stored for coordinates given in the header's axis order.
    pub fn lookup(&self, coords: &[u64]) -> Result<f64> {
        let names = &self.header.axes;
        if coords.len() != names.len() {
            return Err(Error::invalid(
                "lookup point",
                format!("expected {} coordinates, got {}", names.len(), coords.len()),
            ));
        }
        let width = self.header.record_width();
        let key_len = width - 8;
        let mut key = Vec::with_capacity(key_len);
        for c in coords {
            key.extend_from_slice(&c.to_be_bytes());
        }
        let body = &self.map[self.body_offset..];
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let rec = &body[mid * width..(mid + 1) * width];
            match rec[..key_len].cmp(&key[..]) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => {
                    let bits: [u8; 8] = rec[key_len..].try_into().expect("8 bytes");
                    return Ok(f64::from_bits(u64::from_be_bytes(bits)));
                }
            }
        }
        Err(Error::MissingEntry(format_coords(names, coords)))
    }

    pub fn lookup_named(&self, point: &BTreeMap<String, u64>) -> Result<f64> {
        let coords: Vec<u64> = self
            .header
            .axes
            .iter()
            .map(|k| {
                point
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::invalid("lookup point", format!("missing axis {k}")))
            })
            .collect::<Result<_>>()?;
        if let Some(extra) = point.keys().find(|k| !self.header.axes.contains(k)) {
            return Err(Error::invalid("lookup point", format!("unknown axis {extra}")));
        }
        self.lookup(&coords)
    }
}
