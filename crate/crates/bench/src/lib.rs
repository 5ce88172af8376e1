//! Criterion benchmarks for gicshield; see `benches/`.
