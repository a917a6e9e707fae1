//! Benchmarks for the tensor kernels and a student training step live in `benches/`.
