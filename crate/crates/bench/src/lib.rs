//! Criterion benchmarks for the reference backend and fingerprinting. See `benches/`.
