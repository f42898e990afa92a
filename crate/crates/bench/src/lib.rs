//! Criterion benchmarks for the simulator and learner hot paths; see `benches/`.

pub use oversub_core;
