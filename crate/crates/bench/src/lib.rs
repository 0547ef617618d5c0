//! Criterion benchmarks for the controller live in `benches/`.
