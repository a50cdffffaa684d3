//! Criterion benchmarks for `dfm-core`; see `benches/`.
