//! Criterion benchmarks for the estimator and refinement stages live in `benches/`.
