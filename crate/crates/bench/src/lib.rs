//! Criterion benchmarks live under `benches/`; run them with
//! `cargo bench -p histoport-bench`.
