//! Latency of compute-bound kernels.
//!
//! A curve records throughput along one varying dimension at a fixed wave
//! count, together with the measured duration at the largest sample. A new
//! launch is priced by rescaling that reference duration: linearly in the
//! varying dimension, by the ratio of reference throughput to interpolated
//! throughput, and linearly in the number of waves the launch needs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ConfigRecord;
use crate::types::{
    ComputeBreakdown, ConfigMatch, DType, Family, KernelKey, LayerShape, MatMulShape, Prediction,
    RangeFlag, RowShape, ThroughputCurve, TransposeMode,
};

/// How many thread blocks the device runs concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveModel {
    pub sm_count: u32,
    pub blocks_per_sm: u32,
}

impl WaveModel {
    pub fn new(sm_count: u32, blocks_per_sm: u32) -> Result<Self> {
        if sm_count == 0 || blocks_per_sm == 0 {
            return Err(Error::invalid(
                "wave model",
                "sm_count and blocks_per_sm must be >= 1",
            ));
        }
        Ok(WaveModel {
            sm_count,
            blocks_per_sm,
        })
    }

    pub fn blocks_per_wave(&self) -> u64 {
        self.sm_count as u64 * self.blocks_per_sm as u64
    }

    /// Same device, with the occupancy recorded on `curve` if it has one.
    pub fn for_curve(&self, curve: &ThroughputCurve) -> WaveModel {
        WaveModel {
            sm_count: self.sm_count,
            blocks_per_sm: curve.blocks_per_sm.unwrap_or(self.blocks_per_sm),
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn waves_for_blocks(blocks: u128, wm: &WaveModel) -> Result<u64> {
    let per_wave = wm.blocks_per_wave() as u128;
    if per_wave == 0 {
        return Err(Error::invalid("wave model", "blocks per wave must be >= 1"));
    }
    u64::try_from(blocks.div_ceil(per_wave))
        .map_err(|_| Error::invalid("wave count", "wave count overflows u64"))
}

/// Thread blocks launched by a tiled GEMM. Partial tiles cost a full block.
pub fn block_count(shape: &MatMulShape, key: &KernelKey) -> Result<u128> {
    if key.tile_m == 0 || key.tile_n == 0 || key.split_k == 0 {
        return Err(Error::InvalidTile {
            key: key.to_string(),
        });
    }
    Ok(shape.batch as u128
        * ceil_div(shape.m, key.tile_m as u64) as u128
        * ceil_div(shape.n, key.tile_n as u64) as u128
        * key.split_k as u128)
}

/// Number of waves a tiled GEMM needs; a partially filled last wave costs a
/// full wave.
pub fn wave_count(shape: &MatMulShape, key: &KernelKey, wm: &WaveModel) -> Result<u64> {
    waves_for_blocks(block_count(shape, key)?, wm)
}

/// Waves for a row-parallel kernel whose block size is stored in `tile_m`.
pub fn row_wave_count(shape: &RowShape, key: &KernelKey, wm: &WaveModel) -> Result<u64> {
    if key.tile_m == 0 {
        return Err(Error::InvalidTile {
            key: key.to_string(),
        });
    }
    let blocks = ceil_div(shape.rows, key.tile_m as u64) as u128 * key.split_k.max(1) as u128;
    waves_for_blocks(blocks, wm)
}

/// Piecewise-linear throughput at `new_dim`, clamped to the curve's end
/// points outside the sampled range.
pub fn interpolate_throughput(curve: &ThroughputCurve, new_dim: u64) -> (f64, RangeFlag) {
    let samples = &curve.samples;
    let first = samples[0];
    let last = samples[samples.len() - 1];
    if new_dim < first.dim_value {
        return (first.throughput_gflops, RangeFlag::BelowRange);
    }
    if new_dim > last.dim_value {
        return (last.throughput_gflops, RangeFlag::AboveRange);
    }
    match samples.binary_search_by_key(&new_dim, |s| s.dim_value) {
        Ok(i) => (samples[i].throughput_gflops, RangeFlag::InRange),
        Err(i) => {
            let lo = samples[i - 1];
            let hi = samples[i];
            let frac = (new_dim - lo.dim_value) as f64 / (hi.dim_value - lo.dim_value) as f64;
            (
                lo.throughput_gflops + frac * (hi.throughput_gflops - lo.throughput_gflops),
                RangeFlag::InRange,
            )
        }
    }
}

fn scale_reference(curve: &ThroughputCurve, dim: u64, waves: u64) -> (f64, ComputeBreakdown) {
    let (thr, range) = interpolate_throughput(curve, dim);
    let ref_thr = curve.ref_throughput();
    let base = curve.ref_duration_us * (dim as f64 / curve.ref_dim_value as f64) * (ref_thr / thr);
    let wave_scale = waves as f64 / curve.ref_waves as f64;
    let latency = base * wave_scale;
    (
        latency,
        ComputeBreakdown {
            base_duration_us: base,
            interpolated_throughput: thr,
            ref_throughput: ref_thr,
            waves,
            ref_waves: curve.ref_waves,
            wave_scale,
            range,
            config_match: None,
        },
    )
}

fn check_curve(key: &KernelKey, curve: &ThroughputCurve) -> Result<()> {
    if &curve.kernel != key {
        return Err(Error::CurveMismatch {
            key: key.to_string(),
            curve: curve.kernel.to_string(),
        });
    }
    Ok(())
}

/// Latency of a GEMM-family launch from the kernel's throughput curve.
pub fn predict_compute(
    shape: &MatMulShape,
    key: &KernelKey,
    curve: &ThroughputCurve,
    wm: &WaveModel,
) -> Result<Prediction> {
    check_curve(key, curve)?;
    shape.validate()?;
    let waves = wave_count(shape, key, wm)?;
    let (latency_us, breakdown) = scale_reference(curve, shape.k, waves);
    Ok(Prediction {
        latency_us,
        kernel: key.clone(),
        components: Some(crate::types::Breakdown::Compute(breakdown)),
    })
}

/// A launch of any compute family: the family's fixed dimensions plus the
/// value of its varying dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelInstance {
    pub family: Family,
    pub shape: LayerShape,
}

impl KernelInstance {
    pub fn varying_dim(&self) -> u64 {
        match &self.shape {
            LayerShape::MatMul(s) => s.k,
            LayerShape::Rows(r) => r.dim,
        }
    }
}

/// Latency of a custom compute kernel (Triton, fused attention, ...). GEMM
/// families use the tile formula; row-parallel families use
/// `⌈rows / block_size⌉` blocks with the block size stored in `tile_m`.
pub fn predict_generic(
    instance: &KernelInstance,
    key: &KernelKey,
    curve: &ThroughputCurve,
    wm: &WaveModel,
) -> Result<Prediction> {
    check_curve(key, curve)?;
    if instance.family != key.family {
        return Err(Error::CurveMismatch {
            key: format!("{} instance", instance.family),
            curve: key.to_string(),
        });
    }
    let declared = instance.family.varying_dim_name();
    if !curve.varying_dim_name.eq_ignore_ascii_case(declared) {
        return Err(Error::invalid(
            format!("curve {}", curve.kernel),
            format!(
                "curve varies {:?} but {} varies {:?}",
                curve.varying_dim_name, instance.family, declared
            ),
        ));
    }
    let waves = match (&instance.family, &instance.shape) {
        (f, LayerShape::MatMul(s)) if f.is_matmul_like() => {
            s.validate()?;
            wave_count(s, key, wm)?
        }
        (f, LayerShape::Rows(r)) if f.is_row_generic() => {
            if r.rows == 0 || r.dim == 0 {
                return Err(Error::invalid("shape", "rows and dim must be >= 1"));
            }
            row_wave_count(r, key, wm)?
        }
        (Family::Utility(_), _) => {
            return Err(Error::UnknownFamily {
                family: instance.family.to_string(),
            })
        }
        _ => {
            return Err(Error::invalid(
                "shape",
                format!("shape does not fit family {}", instance.family),
            ))
        }
    };
    let (latency_us, breakdown) = scale_reference(curve, instance.varying_dim(), waves);
    Ok(Prediction {
        latency_us,
        kernel: key.clone(),
        components: Some(crate::types::Breakdown::Compute(breakdown)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ResolverTriple {
    family: Family,
    dtype: DType,
    transpose: TransposeMode,
}

#[derive(Debug, Clone)]
struct RecordedShape {
    shape: MatMulShape,
    log2: [f64; 3],
    key: KernelKey,
}

/// Offline replay of the vendor heuristic: the kernel chosen for each
/// recorded shape, with a nearest-shape fallback for unrecorded ones.
#[derive(Debug, Clone, Default)]
pub struct ConfigResolver {
    exact: HashMap<(ResolverTriple, MatMulShape), KernelKey>,
    by_triple: HashMap<ResolverTriple, Vec<RecordedShape>>,
}

impl ConfigResolver {
    pub fn new(records: &[ConfigRecord]) -> Result<Self> {
        let mut resolver = ConfigResolver::default();
        for (i, rec) in records.iter().enumerate() {
            let triple = ResolverTriple {
                family: rec.family.clone(),
                dtype: rec.dtype,
                transpose: rec.transpose_mode,
            };
            match resolver.exact.get(&(triple.clone(), rec.shape)) {
                Some(existing) if existing != &rec.chosen_key => {
                    return Err(Error::invalid(
                        format!("config_map[{i}]"),
                        format!(
                            "shape {:?} already maps to {existing}, not {}",
                            rec.shape, rec.chosen_key
                        ),
                    ))
                }
                Some(_) => continue,
                None => {}
            }
            resolver
                .exact
                .insert((triple.clone(), rec.shape), rec.chosen_key.clone());
            resolver
                .by_triple
                .entry(triple)
                .or_default()
                .push(RecordedShape {
                    shape: rec.shape,
                    log2: [
                        (rec.shape.m as f64).log2(),
                        (rec.shape.n as f64).log2(),
                        (rec.shape.k as f64).log2(),
                    ],
                    key: rec.chosen_key.clone(),
                });
        }
        for list in resolver.by_triple.values_mut() {
            list.sort_by_key(|r| (r.shape.m, r.shape.n, r.shape.k, r.shape.batch));
        }
        Ok(resolver)
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn has(&self, family: &Family, dtype: DType, transpose: TransposeMode) -> bool {
        self.by_triple.contains_key(&ResolverTriple {
            family: family.clone(),
            dtype,
            transpose,
        })
    }

    /// Resolves the kernel for a shape. Exact hits return the recorded key;
    /// otherwise the nearest recorded shape by Chebyshev distance over
    /// `(log2 m, log2 n, log2 k)` wins, ties going to the smaller `(m, n, k)`.
    pub fn resolve(
        &self,
        family: &Family,
        dtype: DType,
        transpose: TransposeMode,
        shape: &MatMulShape,
    ) -> Result<(KernelKey, ConfigMatch)> {
        let triple = ResolverTriple {
            family: family.clone(),
            dtype,
            transpose,
        };
        if let Some(key) = self.exact.get(&(triple.clone(), *shape)) {
            return Ok((key.clone(), ConfigMatch::Exact));
        }
        let list = self
            .by_triple
            .get(&triple)
            .ok_or_else(|| Error::NoConfigAvailable {
                family: family.to_string(),
                dtype: dtype.to_string(),
                transpose: transpose.to_string(),
            })?;
        let q = [
            (shape.m as f64).log2(),
            (shape.n as f64).log2(),
            (shape.k as f64).log2(),
        ];
        let mut best: Option<(f64, &RecordedShape)> = None;
        for rec in list {
            let d = (0..3)
                .map(|i| (rec.log2[i] - q[i]).abs())
                .fold(0.0_f64, f64::max);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, rec));
            }
        }
        let (_, rec) = best.expect("resolver lists are never empty");
        Ok((rec.key.clone(), ConfigMatch::Nearest))
    }
}

/// `resolve_config` as a free function over a resolver.
pub fn resolve_config(
    family: &Family,
    dtype: DType,
    transpose: TransposeMode,
    shape: &MatMulShape,
    resolver: &ConfigResolver,
) -> Result<KernelKey> {
    resolver
        .resolve(family, dtype, transpose, shape)
        .map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CurveSample, Library};

    fn key(tile_m: u32, tile_n: u32, split_k: u32) -> KernelKey {
        KernelKey {
            family: Family::MatMul,
            dtype: DType::Fp32,
            library: Library::Cublas,
            algorithm_id: 1,
            tile_m,
            tile_n,
            split_k,
            swizzle: 0,
            reduction_scheme: 0,
            stages: 0,
            transpose_mode: TransposeMode::Nn,
        }
    }

    fn curve(key: KernelKey, samples: &[(u64, f64)], ref_dur: f64, ref_waves: u64) -> ThroughputCurve {
        ThroughputCurve {
            kernel: key,
            varying_dim_name: "K".into(),
            device_id: "dev".into(),
            samples: samples
                .iter()
                .map(|&(d, t)| CurveSample {
                    dim_value: d,
                    throughput_gflops: t,
                })
                .collect(),
            ref_dim_value: samples.last().unwrap().0,
            ref_duration_us: ref_dur,
            ref_waves,
            blocks_per_sm: None,
        }
    }

    #[test]
    fn wave_count_examples() {
        let wm = WaveModel::new(30, 1).unwrap();
        let k = key(128, 128, 1);
        assert_eq!(wave_count(&MatMulShape::new(1, 128, 128, 64), &k, &wm).unwrap(), 1);
        assert_eq!(wave_count(&MatMulShape::new(1, 129, 128, 64), &k, &wm).unwrap(), 1);
        assert_eq!(block_count(&MatMulShape::new(1, 129, 128, 64), &k).unwrap(), 2);
        let k2 = key(128, 128, 2);
        let s = MatMulShape::new(8, 512, 512, 64);
        assert_eq!(block_count(&s, &k2).unwrap(), 256);
        assert_eq!(wave_count(&s, &k2, &wm).unwrap(), 9);
    }

    #[test]
    fn wave_count_rejects_zero_tile() {
        let wm = WaveModel::new(30, 1).unwrap();
        let err = wave_count(&MatMulShape::new(1, 8, 8, 8), &key(0, 128, 1), &wm);
        assert!(matches!(err, Err(Error::InvalidTile { .. })));
    }

    #[test]
    fn interpolation_examples() {
        let c = curve(key(128, 128, 1), &[(64, 100.0), (256, 300.0)], 10.0, 1);
        assert_eq!(interpolate_throughput(&c, 64), (100.0, RangeFlag::InRange));
        let (t, flag) = interpolate_throughput(&c, 128);
        assert_eq!(flag, RangeFlag::InRange);
        assert!((t - 166.666_666_666_666_66).abs() < 1e-9);
        assert_eq!(interpolate_throughput(&c, 2560), (300.0, RangeFlag::AboveRange));
        assert_eq!(interpolate_throughput(&c, 1), (100.0, RangeFlag::BelowRange));
    }

    #[test]
    fn reference_identity_and_halving() {
        let k = key(128, 128, 1);
        let wm = WaveModel::new(30, 1).unwrap();
        let c = curve(k.clone(), &[(4096, 500.0), (8192, 500.0)], 1234.5, 1);
        let full = predict_compute(&MatMulShape::new(1, 128, 128, 8192), &k, &c, &wm).unwrap();
        assert_eq!(full.latency_us, 1234.5);
        let half = predict_compute(&MatMulShape::new(1, 128, 128, 4096), &k, &c, &wm).unwrap();
        assert_eq!(half.latency_us, 1234.5 / 2.0);
    }

    #[test]
    fn predict_rejects_foreign_curve() {
        let wm = WaveModel::new(30, 1).unwrap();
        let c = curve(key(64, 64, 1), &[(32, 1.0), (64, 2.0)], 1.0, 1);
        let err = predict_compute(&MatMulShape::new(1, 64, 64, 64), &key(128, 128, 1), &c, &wm);
        assert!(matches!(err, Err(Error::CurveMismatch { .. })));
    }

    #[test]
    fn wave_scaling_is_linear() {
        let k = key(128, 128, 1);
        let wm = WaveModel::new(2, 1).unwrap();
        let c = curve(k.clone(), &[(32, 10.0), (64, 10.0)], 8.0, 1);
        let one = predict_compute(&MatMulShape::new(1, 256, 128, 64), &k, &c, &wm).unwrap();
        let three = predict_compute(&MatMulShape::new(1, 640, 128, 64), &k, &c, &wm).unwrap();
        assert_eq!(one.latency_us, 8.0);
        assert_eq!(three.latency_us, 24.0);
        assert_eq!(three.compute_breakdown().unwrap().waves, 3);
    }

    fn record(m: u64, n: u64, k: u64, chosen: KernelKey) -> ConfigRecord {
        ConfigRecord {
            family: Family::MatMul,
            dtype: DType::Fp32,
            transpose_mode: TransposeMode::Nn,
            shape: MatMulShape::new(1, m, n, k),
            chosen_key: chosen,
        }
    }

    #[test]
    fn resolver_exact_nearest_and_missing() {
        let small = key(64, 64, 1);
        let large = key(128, 128, 1);
        let r = ConfigResolver::new(&[
            record(64, 64, 64, small.clone()),
            record(128, 128, 128, large.clone()),
        ])
        .unwrap();
        let (k, m) = r
            .resolve(&Family::MatMul, DType::Fp32, TransposeMode::Nn, &MatMulShape::new(1, 64, 64, 64))
            .unwrap();
        assert_eq!((k, m), (small.clone(), ConfigMatch::Exact));
        let (k, m) = r
            .resolve(&Family::MatMul, DType::Fp32, TransposeMode::Nn, &MatMulShape::new(1, 100, 100, 100))
            .unwrap();
        assert_eq!((k, m), (large, ConfigMatch::Nearest));
        let err = r.resolve(&Family::MatMul, DType::Bf16, TransposeMode::Nn, &MatMulShape::new(1, 64, 64, 64));
        assert!(matches!(err, Err(Error::NoConfigAvailable { .. })));
    }

    #[test]
    fn resolver_tie_goes_to_smaller_shape() {
        let a = key(64, 64, 1);
        let b = key(128, 128, 1);
        // log2 distances from 128 are exactly 1 to both records.
        let r = ConfigResolver::new(&[record(64, 64, 64, a.clone()), record(256, 256, 256, b)]).unwrap();
        let (k, _) = r
            .resolve(&Family::MatMul, DType::Fp32, TransposeMode::Nn, &MatMulShape::new(1, 128, 128, 128))
            .unwrap();
        assert_eq!(k, a);
    }

    #[test]
    fn resolver_rejects_conflicting_records() {
        let err = ConfigResolver::new(&[record(64, 64, 64, key(64, 64, 1)), record(64, 64, 64, key(128, 64, 1))]);
        assert!(err.is_err());
    }

    #[test]
    fn generic_grid_hit_and_flat_doubling() {
        let wm = WaveModel::new(4, 1).unwrap();
        let attn = KernelKey {
            family: Family::FlashAttention,
            tile_m: 64,
            tile_n: 64,
            ..key(64, 64, 1)
        };
        let mut c = curve(attn.clone(), &[(512, 80.0), (1024, 90.0), (2048, 95.0)], 300.0, 2);
        c.varying_dim_name = "seq_len".into();
        let inst = KernelInstance {
            family: Family::FlashAttention,
            shape: LayerShape::Rows(RowShape { rows: 512, dim: 2048 }),
        };
        // 512 rows / 64 = 8 blocks over 4 SMs -> 2 waves.
        assert_eq!(predict_generic(&inst, &attn, &c, &wm).unwrap().latency_us, 300.0);

        let vec_key = KernelKey {
            family: Family::TritonVec,
            library: Library::Triton,
            tile_m: 16,
            tile_n: 0,
            ..key(16, 1, 1)
        };
        let mut flat = curve(vec_key.clone(), &[(256, 40.0), (512, 40.0), (1024, 40.0)], 50.0, 1);
        flat.varying_dim_name = "length".into();
        let at = |dim| KernelInstance {
            family: Family::TritonVec,
            shape: LayerShape::Rows(RowShape { rows: 32, dim }),
        };
        let base = predict_generic(&at(256), &vec_key, &flat, &wm).unwrap().latency_us;
        let doubled = predict_generic(&at(512), &vec_key, &flat, &wm).unwrap().latency_us;
        assert_eq!(doubled, 2.0 * base);
    }

    #[test]
    fn generic_rejects_wrong_varying_dim() {
        let wm = WaveModel::new(4, 1).unwrap();
        let attn = KernelKey {
            family: Family::CutlassAttention,
            ..key(64, 64, 1)
        };
        let c = curve(attn.clone(), &[(512, 80.0), (1024, 90.0)], 300.0, 2);
        let inst = KernelInstance {
            family: Family::CutlassAttention,
            shape: LayerShape::Rows(RowShape { rows: 64, dim: 512 }),
        };
        assert!(predict_generic(&inst, &attn, &c, &wm).is_err());
    }
}
