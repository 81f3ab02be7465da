//! Criterion benchmarks for the latency predictor; see `benches/`.
