//! Criterion benchmarks for the model kernels and optimizers; see `benches/kernels.rs`.
//! Run with `cargo bench -p myeloma-bench`.
