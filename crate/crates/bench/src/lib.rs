//! Criterion benchmarks for subspectra live in `benches/`.
