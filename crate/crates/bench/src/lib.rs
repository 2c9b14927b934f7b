//! Criterion benchmarks for the optimizer and sampling paths; see `benches/`.
