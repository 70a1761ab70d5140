//! Criterion benchmarks for the `airls` crate. See `benches/`.
