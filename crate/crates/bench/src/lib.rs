//! Criterion benchmarks for the inference pipeline; see `benches/`.
