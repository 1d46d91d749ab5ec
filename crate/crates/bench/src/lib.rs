//! Criterion benchmarks for flowrca live under `benches/`.
