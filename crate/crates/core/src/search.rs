//! Decoders and classical baselines: probability-guided sequential sampling,
//! greedy decoding, uniformly randomized decoding, and beam search.
//!
//! Sampling decoders walk from the source, restricting each step to edges
//! whose target is unvisited, and pick the next hop with probability
//! proportional to its edge probability (uniform fallback when the
//! normalizer vanishes). A trial succeeds when it reaches the sink; failed
//! trials are discarded and the best successful path wins. Ties on cost are
//! broken by lexicographic node sequence, so the best-of reduction does not
//! depend on trial order.

use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

use crate::graph::{is_elementary_st_path, Graph, NodeId, Path};
use crate::model::EdgeProbabilities;
use crate::rng::seeded_rng;

/// Beam width used when none is configured.
pub const DEFAULT_BEAM_WIDTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("beam search completed no source->sink path")]
    NoPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Transition with probability proportional to the edge probability.
    Sample,
    /// Deterministic argmax transition; ties go to the lowest node id.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub n_trials: usize,
    /// Per-trial step cap; an elementary path never needs more than
    /// `node_count` steps.
    pub max_steps: usize,
    pub seed: u64,
    pub mode: DecodeMode,
}

impl DecodeConfig {
    pub fn sampling(g: &Graph, n_trials: usize, seed: u64) -> Self {
        DecodeConfig {
            n_trials,
            max_steps: g.node_count(),
            seed,
            mode: DecodeMode::Sample,
        }
    }
}

/// Outcome of a decode or search call. `feasible` implies the path satisfies
/// all elementary s->t invariants; infeasible results may carry no path (no
/// trial reached the sink) or a non-elementary walk (unrestricted decoding).
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub path: Option<Path>,
    pub cost: f64,
    pub solver: String,
    pub samples_used: u64,
    pub wall_time: Duration,
    pub feasible: bool,
}

impl PathResult {
    fn infeasible(solver: &str, samples_used: u64, wall_time: Duration) -> Self {
        PathResult {
            path: None,
            cost: f64::INFINITY,
            solver: solver.to_string(),
            samples_used,
            wall_time,
            feasible: false,
        }
    }
}

/// One guided walk. Returns the node sequence and its cost if the sink was
/// reached within the step cap, otherwise `None`.
fn run_trial(
    g: &Graph,
    p: &EdgeProbabilities,
    mode: DecodeMode,
    max_steps: usize,
    restrict_visited: bool,
    rng: &mut impl Rng,
) -> Option<(f64, Vec<NodeId>)> {
    let mut nodes = vec![g.source()];
    let mut visited = vec![false; g.node_count()];
    visited[g.source()] = true;
    let mut cur = g.source();
    let mut cost = 0.0;
    let mut eligible: Vec<usize> = Vec::new();

    for _ in 0..max_steps {
        eligible.clear();
        for &ei in g.outgoing(cur) {
            if !restrict_visited || !visited[g.edge(ei).to] {
                eligible.push(ei);
            }
        }
        if eligible.is_empty() {
            return None;
        }
        let pick = match mode {
            DecodeMode::Greedy => {
                // Adjacency is sorted by target id, so the first maximum is
                // the lowest-id tie-break.
                let mut best = eligible[0];
                for &ei in &eligible[1..] {
                    if p.prob(ei) > p.prob(best) {
                        best = ei;
                    }
                }
                best
            }
            DecodeMode::Sample => {
                let normalizer: f64 = eligible.iter().map(|&ei| p.prob(ei)).sum();
                if normalizer > 0.0 {
                    let mut target = rng.random_range(0.0..normalizer);
                    let mut chosen = *eligible.last().unwrap();
                    for &ei in &eligible {
                        target -= p.prob(ei);
                        if target < 0.0 {
                            chosen = ei;
                            break;
                        }
                    }
                    chosen
                } else {
                    eligible[rng.random_range(0..eligible.len())]
                }
            }
        };
        let e = g.edge(pick);
        cost += e.weight;
        visited[e.to] = true;
        nodes.push(e.to);
        cur = e.to;
        if cur == g.sink() {
            return Some((cost, nodes));
        }
    }
    None
}

fn best_of_trials(
    g: &Graph,
    p: &EdgeProbabilities,
    cfg: &DecodeConfig,
    restrict_visited: bool,
    solver: &str,
) -> PathResult {
    let start = Instant::now();
    // Greedy transitions are deterministic, so one trial decides.
    let trials = match cfg.mode {
        DecodeMode::Greedy => 1,
        DecodeMode::Sample => cfg.n_trials,
    };
    let mut best: Option<(f64, Vec<NodeId>)> = None;
    for trial in 0..trials {
        let mut rng = seeded_rng(cfg.seed, trial as u64);
        if let Some((cost, nodes)) = run_trial(g, p, cfg.mode, cfg.max_steps, restrict_visited, &mut rng)
        {
            let better = match &best {
                None => true,
                Some((bc, bn)) => cost < *bc || (cost == *bc && nodes < *bn),
            };
            if better {
                best = Some((cost, nodes));
            }
        }
    }
    match best {
        Some((cost, nodes)) => {
            let feasible = is_elementary_st_path(g, &nodes);
            PathResult {
                path: Some(Path { nodes, cost }),
                cost,
                solver: solver.to_string(),
                samples_used: trials as u64,
                wall_time: start.elapsed(),
                feasible,
            }
        }
        None => PathResult::infeasible(solver, trials as u64, start.elapsed()),
    }
}

/// Best-of-N guided decoding over unvisited successors. Per-trial RNG streams
/// are split from the seed by trial index, so the best-of is prefix-monotone:
/// growing `n_trials` never worsens the result.
pub fn sample_decode(g: &Graph, p: &EdgeProbabilities, cfg: &DecodeConfig) -> PathResult {
    best_of_trials(g, p, cfg, true, "sample-decode")
}

/// [`sample_decode`] without the visited-set restriction: walks may revisit
/// nodes, so successful results can be non-elementary (`feasible = false`).
pub fn sample_walk_decode(g: &Graph, p: &EdgeProbabilities, cfg: &DecodeConfig) -> PathResult {
    best_of_trials(g, p, cfg, false, "spp-noelem")
}

/// Guided decoding with a constant probability on every edge, i.e. uniform
/// transitions over the eligible set.
pub fn randomized_decode(g: &Graph, cfg: &DecodeConfig) -> PathResult {
    let p = EdgeProbabilities::uniform(g, 0.5);
    best_of_trials(g, &p, cfg, true, "randomized")
}

#[derive(Clone)]
struct BeamPartial {
    cost: f64,
    nodes: Vec<NodeId>,
    visited: Vec<u64>,
}

impl BeamPartial {
    fn visits(&self, v: NodeId) -> bool {
        self.visited[v / 64] >> (v % 64) & 1 == 1
    }

    fn extend(&self, to: NodeId, weight: f64) -> Self {
        let mut next = self.clone();
        next.cost += weight;
        next.nodes.push(to);
        next.visited[to / 64] |= 1 << (to % 64);
        next
    }
}

/// Level-synchronous beam search over elementary partial paths: at each
/// depth every surviving partial is extended to all unvisited successors,
/// the `beam_width` cheapest partials survive (ties by lexicographic node
/// sequence), and completed s->t paths are collected along the way.
pub fn beam_search(g: &Graph, beam_width: usize) -> Result<PathResult, SearchError> {
    assert!(beam_width >= 1, "beam width must be positive");
    let start = Instant::now();
    let words = g.node_count().div_ceil(64);
    let mut root = BeamPartial {
        cost: 0.0,
        nodes: vec![g.source()],
        visited: vec![0; words],
    };
    root.visited[g.source() / 64] |= 1 << (g.source() % 64);

    let mut beam = vec![root];
    let mut best: Option<(f64, Vec<NodeId>)> = None;

    for _depth in 0..g.node_count().saturating_sub(1) {
        let mut level: Vec<BeamPartial> = Vec::new();
        for partial in &beam {
            let last = *partial.nodes.last().unwrap();
            for &ei in g.outgoing(last) {
                let e = g.edge(ei);
                if partial.visits(e.to) {
                    continue;
                }
                let child = partial.extend(e.to, e.weight);
                if e.to == g.sink() {
                    let better = match &best {
                        None => true,
                        Some((bc, bn)) => {
                            child.cost < *bc || (child.cost == *bc && child.nodes < *bn)
                        }
                    };
                    if better {
                        best = Some((child.cost, child.nodes));
                    }
                } else {
                    level.push(child);
                }
            }
        }
        if level.is_empty() {
            break;
        }
        level.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.nodes.cmp(&b.nodes)));
        level.truncate(beam_width);
        beam = level;
    }

    match best {
        Some((cost, nodes)) => Ok(PathResult {
            path: Some(Path { nodes, cost }),
            cost,
            solver: "beam".to_string(),
            samples_used: 0,
            wall_time: start.elapsed(),
            feasible: true,
        }),
        None => Err(SearchError::NoPath),
    }
}
