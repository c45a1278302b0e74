//! Criterion benchmarks for the parsers, retrieval and metrics; see `benches/`.
