//! Criterion benchmarks for the obfuscation pipeline live in `benches/`.
