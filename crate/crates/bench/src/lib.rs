//! Criterion benchmarks for the solver and text pipeline; see `benches/`.
