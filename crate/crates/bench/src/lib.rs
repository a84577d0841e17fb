//! Criterion benchmarks for the kdaug kernels; see `benches/`.
