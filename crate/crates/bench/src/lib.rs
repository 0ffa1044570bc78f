//! Criterion benchmarks for ips-core live in `benches/`.
