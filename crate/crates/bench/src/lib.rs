//! Benchmark-only crate; see `benches/kernels.rs`.
//!
//! Run with `cargo bench -p convlstm-ad-bench`.
