//! Criterion benchmarks for the processing pipeline live in `benches/`.
