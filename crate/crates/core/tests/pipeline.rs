//! End-to-end checks against the synthetic oracle.

use std::collections::BTreeMap;

use kernlat_core::membound::{fit, MemBoundModel, ResidualStats};
use kernlat_core::nas::{precompute, CacheStore, GridSpec, PrecomputeOptions};
use kernlat_core::oracle::{
    bf16_preset, custom_preset, emit_fixture, fp32_preset, laptop_profile, planted_map,
    transformer_block, SamplingPlan,
};
use kernlat_core::*;

/// Worst block below is 0.093 (fp32, batch 2, seq 128, hidden 768); the
/// error comes from nearest-shape kernel selection, not interpolation.
const TRANSFORMER_BUDGET: f64 = 0.10;

const BLOCKS: [(u64, u64, u64, u64); 8] = [
    (1, 128, 768, 12),
    (2, 128, 768, 12),
    (4, 256, 1024, 16),
    (1, 512, 1024, 16),
    (8, 64, 512, 8),
    (1, 384, 768, 12),
    (2, 197, 768, 12),
    (16, 128, 2048, 16),
];

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn transformer_blocks_track_oracle_truth() {
    for (cfg, dtype) in [(fp32_preset(), DType::Fp32), (bf16_preset(), DType::Bf16)] {
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let p = Predictor::new(&ds).unwrap();
        let wm = cfg.device.wave_model();
        for (b, s, h, heads) in BLOCKS {
            let g = transformer_block("blk", dtype, b, s, h, heads);
            assert_eq!(g.layers.len(), 8);
            let pred = p.predict_model(&g).unwrap();
            let truth = cfg.device.model_truth(&g, &wm).unwrap();
            let e = rel(pred.total_latency_us, truth);
            assert!(e <= TRANSFORMER_BUDGET, "{dtype} block {b}x{s}x{h}: {e}");
            let kinds: Vec<_> = pred.per_layer.iter().map(|l| l.predictor_kind).collect();
            assert_eq!(kinds.iter().filter(|k| **k == PredictorKind::Membound).count(), 2);
        }
    }
}

#[test]
fn pinned_kernels_price_exactly_at_recorded_shapes() {
    let cfg = fp32_preset();
    let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
    let p = Predictor::new(&ds).unwrap();
    let wm = cfg.device.wave_model();
    for rec in ds.config_map.iter().step_by(37) {
        let layer = LayerSpec {
            layer_id: "l".into(),
            family: rec.family.clone(),
            dtype: rec.dtype,
            shape: Some(LayerShape::MatMul(rec.shape)),
            features: None,
            transpose_mode: Some(rec.transpose_mode),
            resolved_key: None,
        };
        let pred = p.predict_layer(&layer).unwrap();
        assert_eq!(pred.kernel, rec.chosen_key);
        assert_eq!(
            pred.compute_breakdown().unwrap().config_match,
            Some(ConfigMatch::Exact)
        );
        let k = rec.shape.k;
        if cfg.plan.dims.contains(&k) {
            let truth = cfg.device.layer_truth(&layer, &wm).unwrap();
            assert!(rel(pred.latency_us, truth) <= 1e-12, "{rec:?}");
        }
    }
}

/// Custom families with the kernel pinned: the only error left is the
/// interpolation gap, bounded by the grid report of the planted curve.
#[test]
fn custom_families_match_oracle_within_grid_bound() {
    let cfg = custom_preset();
    let dev = &cfg.device;
    let ds = emit_fixture(dev, &cfg.plan).unwrap();
    let p = Predictor::new(&ds).unwrap();
    let wm = dev.wave_model();
    let planted = planted_map(dev);
    let mut checked = 0;
    for (key, curve) in &ds.curves {
        let params = planted[key];
        let e = grid_error_report(curve, |d| params.eval(d as f64)).max_rel_err;
        let bound = e / (1.0 - e) + 1e-12;
        for dim in [70u64, 100, 333, 1000, 1500, 3000, 5000, 8000] {
            let shape = if key.family.is_row_generic() {
                LayerShape::Rows(RowShape { rows: 4096, dim })
            } else {
                LayerShape::MatMul(MatMulShape::new(1, 1000, 700, dim))
            };
            let layer = LayerSpec {
                layer_id: format!("{}-{dim}", key.family),
                family: key.family.clone(),
                dtype: key.dtype,
                shape: Some(shape),
                features: None,
                transpose_mode: Some(key.transpose_mode),
                resolved_key: Some(key.clone()),
            };
            let pred = p.predict_layer(&layer).unwrap();
            assert_eq!(
                pred.compute_breakdown().unwrap().config_match,
                Some(ConfigMatch::Given)
            );
            let truth = dev.layer_truth(&layer, &wm).unwrap();
            let err = rel(pred.latency_us, truth);
            assert!(err <= bound, "{key} dim {dim}: {err} > {bound}");
            checked += 1;
        }
    }
    assert_eq!(checked, 8 * 8);
}

#[test]
fn attention_resolves_through_row_config_map() {
    let cfg = custom_preset();
    let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
    let p = Predictor::new(&ds).unwrap();
    let wm = cfg.device.wave_model();
    for family in [Family::FlashAttention, Family::CutlassAttention, Family::TritonVec] {
        for &RowShape { rows, dim } in cfg.plan.row_config_shapes.iter().step_by(5) {
            let shape = LayerShape::Rows(RowShape { rows, dim });
            let layer = LayerSpec {
                layer_id: "attn".into(),
                family: family.clone(),
                dtype: DType::Bf16,
                shape: Some(shape),
                features: None,
                transpose_mode: None,
                resolved_key: None,
            };
            let pred = p.predict_layer(&layer).unwrap();
            let truth = cfg.device.layer_truth(&layer, &wm).unwrap();
            assert!(rel(pred.latency_us, truth) <= 1e-12, "{family} {rows}x{dim}");
        }
    }
}

fn flat_dataset(ref_duration_us: f64, relu_weight: f64) -> Dataset {
    let mut ds = Dataset::new(laptop_profile());
    let key = KernelKey {
        family: Family::MatMul,
        dtype: DType::Fp32,
        library: Library::Cublas,
        algorithm_id: 0,
        tile_m: 128,
        tile_n: 128,
        split_k: 1,
        swizzle: 0,
        reduction_scheme: 0,
        stages: 0,
        transpose_mode: TransposeMode::Nn,
    };
    ds.curves.insert(
        key.clone(),
        ThroughputCurve {
            kernel: key,
            varying_dim_name: "K".into(),
            device_id: ds.device.device_id.clone(),
            samples: vec![
                CurveSample {
                    dim_value: 32,
                    throughput_gflops: 1000.0,
                },
                CurveSample {
                    dim_value: 8192,
                    throughput_gflops: 1000.0,
                },
            ],
            ref_dim_value: 8192,
            ref_duration_us,
            ref_waves: 1,
            blocks_per_sm: None,
        },
    );
    ds.membound_models.push(MemBoundModel {
        kernel_name: "relu".into(),
        dtype: DType::Fp32,
        weights: [0.0, 0.0, 0.0, 0.0, relu_weight],
        intercept: 0.0,
        train_device_id: ds.device.device_id.clone(),
        residual_stats: ResidualStats {
            max_rel_err: 0.0,
            mean_rel_err: 0.0,
        },
    });
    ds
}

#[test]
fn twice_as_fast_second_device_gets_two_thirds_of_the_work() {
    let mut layers = Vec::new();
    for i in 0..12 {
        layers.push(if i % 3 == 2 {
            LayerSpec {
                layer_id: format!("act{i}"),
                family: Family::Utility("relu".into()),
                dtype: DType::Fp32,
                shape: None,
                features: Some(MemBoundFeatures {
                    total_bytes_accessed: 4096.0,
                    ..Default::default()
                }),
                transpose_mode: None,
                resolved_key: None,
            }
        } else {
            LayerSpec {
                layer_id: format!("mm{i}"),
                family: Family::MatMul,
                dtype: DType::Fp32,
                shape: Some(LayerShape::MatMul(MatMulShape::new(1, 128, 128, 8192))),
                features: None,
                transpose_mode: None,
                resolved_key: None,
            }
        });
    }
    let graph = ModelGraph {
        model_name: "chain".into(),
        batch_size: 1,
        layers,
    };
    // Every layer costs 16 us on A and 8 us on B.
    let a = flat_dataset(16.0, 1.0 / 256.0);
    let b = flat_dataset(8.0, 1.0 / 512.0);
    let wm = WaveModel::new(30, 1).unwrap();
    let plan = partition_two_device(&graph, &a, &b, wm, wm, None).unwrap();
    assert!(plan.device_a.latencies().iter().all(|l| *l == 16.0));
    assert!(plan.device_b.latencies().iter().all(|l| *l == 8.0));
    assert_eq!(plan.cut_after_layer_index, 4);
    assert_eq!((plan.stage_a_us, plan.stage_b_us), (64.0, 64.0));
    let total_a = plan.device_a.total_latency_us;
    assert!((plan.stage_a_us / total_a - 1.0 / 3.0).abs() < 0.01);
    assert_eq!(plan.throughput_estimate(100), 64.0 * 101.0);
}

#[test]
fn noise_averaging_converges() {
    let mut errors = Vec::new();
    for reps in [1u32, 25, 400] {
        let mut cfg = fp32_preset();
        cfg.device.noise_rel_sigma = 0.05;
        cfg.device.noise_seed = 7;
        cfg.plan.repetitions = reps;
        cfg.plan.config_shapes.truncate(1);
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let planted = planted_map(&cfg.device);
        let mut sum = 0.0;
        let mut n = 0.0;
        for (key, curve) in &ds.curves {
            for s in &curve.samples {
                sum += rel(s.throughput_gflops, planted[key].eval(s.dim_value as f64));
                n += 1.0;
            }
        }
        errors.push(sum / n);
    }
    // Mean |error| of a mean-one log-normal average shrinks like 1/sqrt(n).
    assert!(errors[0] > 0.02 && errors[0] < 0.06, "{errors:?}");
    assert!(errors[1] < errors[0] / 3.0, "{errors:?}");
    assert!(errors[2] < errors[1] / 2.0, "{errors:?}");
}

#[test]
fn fixtures_are_reproducible() {
    let mut cfg = fp32_preset();
    cfg.device.noise_rel_sigma = 0.02;
    cfg.device.noise_seed = 99;
    let one = emit_fixture(&cfg.device, &cfg.plan).unwrap().to_json_string();
    let two = emit_fixture(&cfg.device, &cfg.plan).unwrap().to_json_string();
    assert_eq!(one, two);
    cfg.device.noise_seed = 100;
    let other = emit_fixture(&cfg.device, &cfg.plan).unwrap().to_json_string();
    assert_ne!(one, other);
}

#[test]
fn fixture_files_ingest_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for (cfg, curves) in [(fp32_preset(), 13), (bf16_preset(), 96), (custom_preset(), 8)] {
        let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
        let path = dir.path().join("fx.json");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.curves.len(), curves);
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }
}

#[test]
fn graph_files_keep_layer_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(
        &path,
        r#"{"model_name": "tiny", "batch_size": 1, "layers": [
            {"layer_id": "fc", "family": "linear", "dtype": "fp32",
             "shape": {"m": 64, "n": 64, "k": 64}},
            {"layer_id": "sm", "family": "softmax", "dtype": "fp32",
             "features": {"flops": 1, "int_ops": 1, "bytes_loaded": 1, "bytes_stored": 1, "total_bytes_accessed": 2}}
        ]}"#,
    )
    .unwrap();
    let g = load_model_graph(&path).unwrap();
    let ids: Vec<_> = g.layers.iter().map(|l| l.layer_id.as_str()).collect();
    assert_eq!(ids, ["fc", "sm"]);
    assert_eq!(g.layers[0].transpose(), TransposeMode::Tn);

    let block = transformer_block("blk", DType::Fp32, 1, 128, 768, 12);
    std::fs::write(&path, serde_json::to_string(&block).unwrap()).unwrap();
    assert_eq!(load_model_graph(&path).unwrap().layers.len(), 8);

    std::fs::write(&path, r#"{"model_name": "e", "batch_size": 1, "layers": []}"#).unwrap();
    assert_eq!(load_model_graph(&path).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn membound_examples() {
    // y = 0.5 * total_bytes + 3, noiseless.
    let records: Vec<(MemBoundFeatures, f64)> = (1..=20)
        .map(|i| {
            let f = MemBoundFeatures {
                flops: 10.0 * i as f64,
                int_ops: (i * i) as f64,
                bytes_loaded: 100.0 * (i % 7) as f64,
                bytes_stored: 7.0 * (i % 5) as f64,
                total_bytes_accessed: 1000.0 + 37.0 * (i * i * i) as f64,
            };
            (f, 0.5 * f.total_bytes_accessed + 3.0)
        })
        .collect();
    let m = fit(&records, "add", DType::Fp32, "dev").unwrap();
    assert!((m.weights[4] - 0.5).abs() <= 1e-9, "{:?}", m.weights);
    for w in &m.weights[..4] {
        assert!(w.abs() <= 1e-9, "{:?}", m.weights);
    }
    assert!((m.intercept - 3.0).abs() <= 1e-9);

    // Zero intercept: doubling the features doubles the latency.
    let z = MemBoundModel {
        intercept: 0.0,
        weights: [1e-6, 2e-6, 3e-6, 1e-6, 2e-6],
        ..m.clone()
    };
    let f = records[7].0;
    let twice = MemBoundFeatures::from_array(f.to_array().map(|v| 2.0 * v));
    let (p1, p2) = (predict_membound(&z, &f).latency_us, predict_membound(&z, &twice).latency_us);
    if p1 > membound::DEFAULT_LAUNCH_FLOOR_US {
        assert_eq!(p2, 2.0 * p1);
    }
    let big = MemBoundFeatures::from_array(f.to_array().map(|v| 1e4 * v));
    let big2 = MemBoundFeatures::from_array(big.to_array().map(|v| 2.0 * v));
    assert_eq!(
        predict_membound(&z, &big2).latency_us,
        2.0 * predict_membound(&z, &big).latency_us
    );
}

#[test]
fn policy_between_datacenter_and_laptop_devices() {
    let rtx3060m = laptop_profile();
    let a100 = DeviceProfile {
        device_id: "a100".into(),
        max_freq_ghz: 1.410,
        fp32_tflops: 19.49,
        bf16_tflops: Some(311.87),
        dram_bw_gbs: 1560.0,
        mem_gb: 40.0,
        l2_mb: 40.0,
        sm_count: 108,
        cuda_cores: 6912,
        power_w: 400.0,
        collection_freq_mhz: 1410.0,
    };
    let p = derive_policy(&a100, &rtx3060m);
    assert_eq!(p.byte_scale, 1560.0 / 336.0);
    assert!((p.byte_scale - 4.643).abs() < 1e-3);
    assert_eq!(p.instr_scale, (6912.0 * 1.410) / (3840.0 * 2.090));
    let back = derive_policy(&rtx3060m, &a100);
    assert!((p.byte_scale * back.byte_scale - 1.0).abs() < 1e-15);
    assert!((p.instr_scale * back.instr_scale - 1.0).abs() < 1e-15);
}

fn small_grid(dtype: DType) -> GridSpec {
    GridSpec {
        family: Family::MatMul,
        dtype,
        transpose_mode: None,
        axes: [
            ("m".to_string(), vec![64, 200, 1024]),
            ("n".to_string(), vec![64, 512]),
            ("k".to_string(), vec![32, 100, 4096, 9000]),
            ("batch".to_string(), vec![1, 3]),
        ]
        .into_iter()
        .collect(),
    }
}

fn point(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(a, v)| (a.to_string(), *v)).collect()
}

#[test]
fn cache_reproducibility_and_lookup_errors() {
    let cfg = fp32_preset();
    let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
    let p = Predictor::new(&ds).unwrap();
    let grid = small_grid(DType::Fp32);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for jobs in [Some(1), Some(3), None] {
        let path = dir.path().join(format!("c{}.pm2l", files.len()));
        let opts = PrecomputeOptions {
            skip_unresolved: false,
            jobs,
        };
        let s = precompute(&grid, &ds, &p, &path, &opts).unwrap();
        assert_eq!((s.count, s.skipped), (48, 0));
        files.push(std::fs::read(&path).unwrap());
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));

    let path = dir.path().join("c0.pm2l");
    let store = CacheStore::open_checked(&path, &ds, Some(&grid)).unwrap();
    assert_eq!(store.len(), 48);
    let q = point(&[("m", 200), ("n", 512), ("k", 100), ("batch", 3)]);
    let direct = p
        .predict_compute_shape(
            &Family::MatMul,
            DType::Fp32,
            TransposeMode::Nn,
            &LayerShape::MatMul(MatMulShape::new(3, 200, 512, 100)),
        )
        .unwrap()
        .latency_us;
    assert_eq!(store.lookup_named(&q).unwrap().to_bits(), direct.to_bits());

    let outside = point(&[("m", 201), ("n", 512), ("k", 100), ("batch", 3)]);
    assert!(matches!(store.lookup_named(&outside), Err(Error::MissingEntry(_))));

    let mut other = ds.clone();
    other.membound_records.pop();
    assert!(matches!(
        CacheStore::open_checked(&path, &other, Some(&grid)),
        Err(Error::StaleCache(_))
    ));
    let mut wider = grid.clone();
    wider.axes.get_mut("m").unwrap().push(4096);
    assert!(matches!(
        CacheStore::open_checked(&path, &ds, Some(&wider)),
        Err(Error::StaleCache(_))
    ));
}

#[test]
fn unresolved_points_fail_or_are_skipped() {
    let cfg = fp32_preset();
    let ds = emit_fixture(&cfg.device, &cfg.plan).unwrap();
    let p = Predictor::new(&ds).unwrap();
    let grid = small_grid(DType::Bf16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bf16.pm2l");
    let err = precompute(&grid, &ds, &p, &path, &PrecomputeOptions::default()).unwrap_err();
    match err {
        Error::UnresolvedPoint { coords, .. } => assert!(coords.contains("batch=1"), "{coords}"),
        other => panic!("unexpected {other}"),
    }
    assert!(!path.exists());

    let opts = PrecomputeOptions {
        skip_unresolved: true,
        jobs: None,
    };
    let s = precompute(&grid, &ds, &p, &path, &opts).unwrap();
    assert_eq!((s.count, s.skipped), (0, 48));
    let store = CacheStore::open(&path).unwrap();
    assert!(store.is_empty());
    assert_eq!(store.header().skipped, 48);
}

#[test]
fn sampling_plan_powers() {
    assert_eq!(SamplingPlan::powers_of_two(5, 7), vec![32, 64, 128]);
}
