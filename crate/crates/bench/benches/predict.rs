use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kernlat_core::nas::{precompute, CacheStore, GridSpec, PrecomputeOptions};
use kernlat_core::oracle::{emit_fixture, preset, transformer_block};
use kernlat_core::{DType, Family, LayerShape, MatMulShape, Predictor, TransposeMode};

fn fixture() -> kernlat_core::Dataset {
    let cfg = preset("fp32").unwrap();
    emit_fixture(&cfg.device, &cfg.plan).unwrap()
}

fn grid() -> GridSpec {
    GridSpec {
        family: Family::MatMul,
        dtype: DType::Fp32,
        transpose_mode: None,
        axes: [
            ("m".to_string(), vec![64, 128, 256, 512, 1024, 2048]),
            ("n".to_string(), vec![64, 256, 1024, 4096]),
            ("k".to_string(), vec![32, 256, 1024, 4096, 8192]),
        ]
        .into_iter()
        .collect(),
    }
}

fn bench(c: &mut Criterion) {
    let ds = fixture();
    let p = Predictor::new(&ds).unwrap();

    let shape = LayerShape::MatMul(MatMulShape::new(1, 512, 768, 3072));
    c.bench_function("predict_compute_shape", |b| {
        b.iter(|| {
            p.predict_compute_shape(&Family::MatMul, DType::Fp32, TransposeMode::Nn, black_box(&shape))
                .unwrap()
        })
    });

    let block = transformer_block("blk", DType::Fp32, 1, 128, 768, 12);
    c.bench_function("predict_model_transformer_block", |b| {
        b.iter(|| p.predict_model(black_box(&block)).unwrap())
    });

    let grid = grid();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.pm2l");
    let opts = PrecomputeOptions {
        skip_unresolved: false,
        jobs: Some(1),
    };
    c.bench_function("precompute_120_points", |b| {
        b.iter(|| precompute(&grid, &ds, &p, &out, &opts).unwrap())
    });

    let store = CacheStore::open(&out).unwrap();
    let coords = [256u64, 512, 1024]; // k, m, n
    c.bench_function("cache_lookup", |b| b.iter(|| store.lookup(black_box(&coords)).unwrap()));
}

criterion_group!(benches, bench);
criterion_main!(benches);
