//! Shared fixtures for the pipeline benchmarks.

use espp_core::graph::{generate, GeneratorSpec, Graph};

/// Deterministic ER instance used across benchmarks.
pub fn er_instance(n: usize, p: f64, seed: u64) -> Graph {
    generate(&GeneratorSpec::erdos_renyi(n, p, seed)).expect("benchmark instance")
}
