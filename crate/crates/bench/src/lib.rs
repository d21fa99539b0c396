//! Criterion benchmarks for the simulator step, the Q-network update and an
//! amendment round. Run them with `cargo bench -p tsc-bench`.
