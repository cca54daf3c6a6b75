//! Solver workbench for the elementary shortest-path problem (ESPP) on
//! directed graphs that may contain negative-cost cycles.
//!
//! The workbench combines:
//!
//! - a learned per-instance solver: node value estimates are mapped to edge
//!   probabilities and optimized against a surrogate loss (objective, flow
//!   conservation, a negative-cycle slack penalty, and alignment terms), then
//!   decoded into an elementary path by guided sampling;
//! - exact references: a labeling algorithm with dominance pruning, a
//!   brute-force path enumerator, and backward Bellman-Ford value functions;
//! - classical heuristics: beam search and uniformly randomized decoding;
//! - an experiment harness: dataset generation, method matrices, gap metrics,
//!   ablations, sampling/penalty/density/distribution studies, CSV output.

pub mod autodiff;
pub mod exact;
pub mod graph;
pub mod harness;
pub mod loss;
pub mod model;
pub mod rng;
pub mod search;
pub mod solver;

pub use exact::{BellmanFordOutcome, ExactResult, SolveLimits};
pub use graph::{
    Cycle, Edge, GeneratorSpec, Graph, GraphFamily, NodeId, Path, WeightDistribution,
};
pub use loss::{LossBreakdown, LossConfig, LossToggles, PenaltyPreset};
pub use model::{EdgeProbabilities, InitScheme, ValueAssignment};
pub use search::{DecodeConfig, DecodeMode, PathResult};
pub use solver::{SolveTrace, SolverConfig};
