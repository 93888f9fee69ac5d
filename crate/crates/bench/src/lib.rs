//! Criterion benchmarks for the codec and the throughput simulator; see `benches/`.
