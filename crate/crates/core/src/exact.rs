//! Exact and reference solvers: a labeling algorithm with dominance pruning,
//! a brute-force elementary-path enumerator, and backward Bellman-Ford value
//! functions on negative-cycle-free graphs.

use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::graph::{Graph, NodeId, Path};
use crate::model::ValueAssignment;

/// Node capacity of the fixed-width visited bitset used by labels.
pub const MAX_LABEL_NODES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("sink is unreachable from the source by any elementary path")]
    NoPath,
    #[error("brute force is guarded to at most {max} nodes, got {node_count}")]
    SizeGuard { node_count: usize, max: usize },
    #[error("labeling supports at most {max} nodes, got {node_count}")]
    TooManyNodes { node_count: usize, max: usize },
}

/// Resource limits for truncatable exact solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveLimits {
    pub max_labels: u64,
    pub time_budget: Duration,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_labels: 5_000_000,
            time_budget: Duration::from_secs(300),
        }
    }
}

/// Result of an exact solve. `truncated` marks runs that hit a limit and
/// returned their best incumbent; `path` and `optimum` are present together.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub path: Option<Path>,
    pub optimum: Option<f64>,
    pub expanded_labels: u64,
    pub wall_time: Duration,
    pub truncated: bool,
}

/// Fixed-width node set for labeling states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VisitedSet(u128);

impl VisitedSet {
    fn singleton(v: NodeId) -> Self {
        VisitedSet(1u128 << v)
    }

    fn contains(self, v: NodeId) -> bool {
        self.0 >> v & 1 == 1
    }

    fn insert(self, v: NodeId) -> Self {
        VisitedSet(self.0 | (1u128 << v))
    }

    fn is_subset_of(self, other: VisitedSet) -> bool {
        self.0 & !other.0 == 0
    }

    fn len(self) -> u32 {
        self.0.count_ones()
    }
}

/// Partial-path state at a node: accumulated cost, visited set, and the
/// label it extends.
#[derive(Debug, Clone, Copy)]
struct Label {
    node: NodeId,
    cost: f64,
    visited: VisitedSet,
    pred: Option<u32>,
    alive: bool,
}

/// Queue entry ordered best-first by cost, then fewer visited nodes, then
/// lower node id (deterministic runs, early incumbents under truncation).
struct QueueEntry {
    cost: f64,
    visited_len: u32,
    node: NodeId,
    label_idx: u32,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; reverse for best-first extraction.
        self.cost
            .total_cmp(&other.cost)
            .then(self.visited_len.cmp(&other.visited_len))
            .then(self.node.cmp(&other.node))
            .then(self.label_idx.cmp(&other.label_idx))
            .reverse()
    }
}

/// Minimum-cost elementary source->sink path via label extension.
///
/// Dominance rule: a label at `v` dominates another at `v` when its cost is
/// no larger and its visited set is a subset. Dominated labels are pruned.
/// Hitting a limit returns the best incumbent with `truncated = true`.
pub fn labeling_solve(g: &Graph, limits: &SolveLimits) -> Result<ExactResult, ExactError> {
    labeling_solve_with_dominance(g, limits, true)
}

/// [`labeling_solve`] with the dominance rule optionally disabled; pruning
/// must never change the returned optimum, only the label count.
pub fn labeling_solve_with_dominance(
    g: &Graph,
    limits: &SolveLimits,
    use_dominance: bool,
) -> Result<ExactResult, ExactError> {
    if g.node_count() > MAX_LABEL_NODES {
        return Err(ExactError::TooManyNodes {
            node_count: g.node_count(),
            max: MAX_LABEL_NODES,
        });
    }
    let start = Instant::now();
    let (s, t) = (g.source(), g.sink());

    let mut arena: Vec<Label> = Vec::new();
    let mut queue: BinaryHeap<QueueEntry> = BinaryHeap::new();
    // Live (non-dominated) labels per node.
    let mut live: Vec<Vec<u32>> = vec![Vec::new(); g.node_count()];
    let mut incumbent: Option<(f64, u32)> = None;
    let mut expanded: u64 = 0;
    let mut truncated = false;

    let root = Label {
        node: s,
        cost: 0.0,
        visited: VisitedSet::singleton(s),
        pred: None,
        alive: true,
    };
    arena.push(root);
    live[s].push(0);
    queue.push(QueueEntry {
        cost: 0.0,
        visited_len: 1,
        node: s,
        label_idx: 0,
    });

    while let Some(entry) = queue.pop() {
        if arena.len() as u64 >= limits.max_labels {
            truncated = true;
            break;
        }
        if expanded % 1024 == 0 && start.elapsed() > limits.time_budget {
            truncated = true;
            break;
        }
        let label = arena[entry.label_idx as usize];
        if !label.alive {
            continue;
        }
        expanded += 1;

        for &ei in g.outgoing(label.node) {
            let e = g.edge(ei);
            if label.visited.contains(e.to) {
                continue;
            }
            let cost = label.cost + e.weight;
            let visited = label.visited.insert(e.to);

            if e.to == t {
                let better = incumbent.map_or(true, |(best, _)| cost < best);
                if better {
                    let idx = arena.len() as u32;
                    arena.push(Label {
                        node: t,
                        cost,
                        visited,
                        pred: Some(entry.label_idx),
                        alive: true,
                    });
                    incumbent = Some((cost, idx));
                }
                continue;
            }

            if use_dominance {
                let mut dominated = false;
                for &other_idx in &live[e.to] {
                    let other = &arena[other_idx as usize];
                    if other.alive
                        && other.cost <= cost
                        && other.visited.is_subset_of(visited)
                    {
                        dominated = true;
                        break;
                    }
                }
                if dominated {
                    continue;
                }
                live[e.to].retain(|&other_idx| {
                    let other = &mut arena[other_idx as usize];
                    if other.alive && cost <= other.cost && visited.is_subset_of(other.visited) {
                        other.alive = false;
                    }
                    other.alive
                });
            }

            let idx = arena.len() as u32;
            arena.push(Label {
                node: e.to,
                cost,
                visited,
                pred: Some(entry.label_idx),
                alive: true,
            });
            live[e.to].push(idx);
            queue.push(QueueEntry {
                cost,
                visited_len: visited.len(),
                node: e.to,
                label_idx: idx,
            });
        }
    }

    let wall_time = start.elapsed();
    match incumbent {
        Some((cost, idx)) => {
            let mut nodes = Vec::new();
            let mut cur = Some(idx);
            while let Some(i) = cur {
                nodes.push(arena[i as usize].node);
                cur = arena[i as usize].pred;
            }
            nodes.reverse();
            Ok(ExactResult {
                path: Some(Path { nodes, cost }),
                optimum: Some(cost),
                expanded_labels: expanded,
                wall_time,
                truncated,
            })
        }
        None if truncated => Ok(ExactResult {
            path: None,
            optimum: None,
            expanded_labels: expanded,
            wall_time,
            truncated: true,
        }),
        None => Err(ExactError::NoPath),
    }
}

/// Size cap for [`brute_force_solve`].
pub const BRUTE_FORCE_MAX_NODES: usize = 12;

/// Depth-first enumeration of every elementary source->sink path; no pruning
/// beyond elementarity. Independent reference for the other solvers.
pub fn brute_force_solve(g: &Graph) -> Result<ExactResult, ExactError> {
    if g.node_count() > BRUTE_FORCE_MAX_NODES {
        return Err(ExactError::SizeGuard {
            node_count: g.node_count(),
            max: BRUTE_FORCE_MAX_NODES,
        });
    }
    let start = Instant::now();

    struct Dfs<'a> {
        g: &'a Graph,
        on_path: Vec<bool>,
        stack: Vec<NodeId>,
        best: Option<(f64, Vec<NodeId>)>,
        visits: u64,
    }

    impl Dfs<'_> {
        fn run(&mut self, u: NodeId, cost: f64) {
            self.visits += 1;
            if u == self.g.sink() {
                if self.best.as_ref().map_or(true, |(b, _)| cost < *b) {
                    self.best = Some((cost, self.stack.clone()));
                }
                return;
            }
            for &ei in self.g.outgoing(u) {
                let e = self.g.edge(ei);
                if !self.on_path[e.to] {
                    self.on_path[e.to] = true;
                    self.stack.push(e.to);
                    self.run(e.to, cost + e.weight);
                    self.stack.pop();
                    self.on_path[e.to] = false;
                }
            }
        }
    }

    let mut dfs = Dfs {
        g,
        on_path: vec![false; g.node_count()],
        stack: vec![g.source()],
        best: None,
        visits: 0,
    };
    dfs.on_path[g.source()] = true;
    dfs.run(g.source(), 0.0);

    match dfs.best {
        Some((cost, nodes)) => Ok(ExactResult {
            path: Some(Path { nodes, cost }),
            optimum: Some(cost),
            expanded_labels: dfs.visits,
            wall_time: start.elapsed(),
            truncated: false,
        }),
        None => Err(ExactError::NoPath),
    }
}

/// Outcome of the backward Bellman-Ford sweep: exact cost-to-sink values with
/// the convergence iteration k*, or a flag when values keep changing past the
/// node count (a negative cycle that can reach the sink).
#[derive(Debug, Clone, PartialEq)]
pub enum BellmanFordOutcome {
    Converged(ValueAssignment),
    NegativeCycle { iterations: usize },
}

impl BellmanFordOutcome {
    pub fn values(&self) -> Option<&ValueAssignment> {
        match self {
            BellmanFordOutcome::Converged(v) => Some(v),
            BellmanFordOutcome::NegativeCycle { .. } => None,
        }
    }
}

/// Synchronous backward Bellman iteration of `d(u) <- min over (u,v) of
/// (w_uv + d(v))`, anchored at `d(t) = min(0, ...)` so negative cycles
/// through the sink destabilize the values and get flagged. Nodes that cannot
/// reach the sink stay at `+inf`.
///
/// `max_iters` must be at least the node count for the negative-cycle flag to
/// be meaningful; callers normally pass `g.node_count()`.
pub fn bellman_ford_to_sink(g: &Graph, max_iters: usize) -> BellmanFordOutcome {
    let n = g.node_count();
    let t = g.sink();
    let mut d = vec![f64::INFINITY; n];
    d[t] = 0.0;

    for k in 1..=max_iters {
        let mut next = vec![f64::INFINITY; n];
        let mut changed = false;
        for u in 0..n {
            let mut best = if u == t { 0.0 } else { f64::INFINITY };
            for &ei in g.outgoing(u) {
                let e = g.edge(ei);
                let cand = e.weight + d[e.to];
                if cand < best {
                    best = cand;
                }
            }
            next[u] = best;
            if best != d[u] {
                changed = true;
            }
        }
        if !changed {
            return BellmanFordOutcome::Converged(ValueAssignment::with_convergence(d, k - 1));
        }
        d = next;
    }
    BellmanFordOutcome::NegativeCycle {
        iterations: max_iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{detect_negative_cycle, generate, GeneratorSpec};
    use crate::rng::derive_seed;

    fn graph(n: usize, edges: &[(usize, usize, f64)], s: usize, t: usize) -> Graph {
        Graph::new(n, edges.iter().copied(), s, t).unwrap()
    }

    #[test]
    fn single_negative_edge() {
        let g = graph(2, &[(0, 1, -0.3)], 0, 1);
        let r = labeling_solve(&g, &SolveLimits::default()).unwrap();
        assert_eq!(r.optimum, Some(-0.3));
        assert_eq!(r.path.unwrap().nodes, vec![0, 1]);
        assert!(!r.truncated);
    }

    #[test]
    fn negative_cycle_does_not_fool_labeling() {
        // s<->a is a cost -2 cycle; the optimum elementary path is s->a->t.
        let g = graph(3, &[(0, 1, -1.0), (1, 0, -1.0), (0, 2, 1.0), (1, 2, 1.0)], 0, 2);
        let r = labeling_solve(&g, &SolveLimits::default()).unwrap();
        let b = brute_force_solve(&g).unwrap();
        assert_eq!(b.optimum, Some(0.0));
        assert_eq!(r.optimum, b.optimum);
        assert_eq!(r.path.unwrap().nodes, vec![0, 1, 2]);
    }

    #[test]
    fn brute_force_basics() {
        let g = graph(3, &[(0, 2, 1.0), (0, 1, 0.4), (1, 2, 0.4)], 0, 2);
        let r = brute_force_solve(&g).unwrap();
        assert!((r.optimum.unwrap() - 0.8).abs() < 1e-12);

        let mut edges = Vec::new();
        for u in 0..4 {
            for v in 0..4 {
                if u != v {
                    edges.push((u, v, 1.0));
                }
            }
        }
        let complete = graph(4, &edges, 0, 3);
        assert_eq!(brute_force_solve(&complete).unwrap().optimum, Some(1.0));

        let big = generate(&GeneratorSpec::erdos_renyi(13, 0.3, 1)).unwrap();
        assert!(matches!(
            brute_force_solve(&big),
            Err(ExactError::SizeGuard { node_count: 13, .. })
        ));

        let disconnected = graph(3, &[(0, 1, 1.0)], 0, 2);
        assert!(matches!(brute_force_solve(&disconnected), Err(ExactError::NoPath)));
        assert!(matches!(
            labeling_solve(&disconnected, &SolveLimits::default()),
            Err(ExactError::NoPath)
        ));
    }

    #[test]
    fn labeling_matches_brute_force_on_random_instances() {
        for seed in 0..120u64 {
            let n = 4 + (seed % 6) as usize;
            let g = generate(&GeneratorSpec::erdos_renyi(n, 0.35, derive_seed(101, seed))).unwrap();
            let lab = labeling_solve(&g, &SolveLimits::default()).unwrap();
            let bf = brute_force_solve(&g).unwrap();
            assert!(!lab.truncated);
            assert!(
                (lab.optimum.unwrap() - bf.optimum.unwrap()).abs() <= 1e-9,
                "seed {seed}: labeling {:?} vs brute {:?}",
                lab.optimum,
                bf.optimum
            );
            let p = lab.path.unwrap();
            assert!(crate::graph::is_elementary_st_path(&g, &p.nodes));
            assert!((crate::graph::path_cost(&g, &p.nodes).unwrap() - p.cost).abs() < 1e-9);
        }
    }

    #[test]
    fn dominance_changes_label_count_not_optimum() {
        for seed in 0..40u64 {
            let g = generate(&GeneratorSpec::erdos_renyi(8, 0.4, derive_seed(102, seed))).unwrap();
            let with = labeling_solve_with_dominance(&g, &SolveLimits::default(), true).unwrap();
            let without = labeling_solve_with_dominance(&g, &SolveLimits::default(), false).unwrap();
            assert_eq!(with.optimum, without.optimum, "seed {seed}");
            assert!(with.expanded_labels <= without.expanded_labels);
        }
    }

    #[test]
    fn adding_an_edge_never_increases_the_optimum() {
        for seed in 0..40u64 {
            let g = generate(&GeneratorSpec::erdos_renyi(7, 0.3, derive_seed(103, seed))).unwrap();
            let base = labeling_solve(&g, &SolveLimits::default()).unwrap().optimum.unwrap();
            // First absent ordered pair becomes a new cheap-ish edge.
            let mut found = None;
            'outer: for u in 0..g.node_count() {
                for v in 0..g.node_count() {
                    if u != v && g.edge_index(u, v).is_none() {
                        found = Some((u, v));
                        break 'outer;
                    }
                }
            }
            let Some((u, v)) = found else { continue };
            let mut edges: Vec<(usize, usize, f64)> =
                g.edges().iter().map(|e| (e.from, e.to, e.weight)).collect();
            edges.push((u, v, 0.1));
            let g2 = Graph::new(g.node_count(), edges, g.source(), g.sink()).unwrap();
            let extended = labeling_solve(&g2, &SolveLimits::default()).unwrap().optimum.unwrap();
            assert!(
                extended <= base + 1e-12,
                "seed {seed}: adding ({u},{v}) raised optimum {base} -> {extended}"
            );
        }
    }

    #[test]
    fn truncation_returns_incumbent_with_flag() {
        let g = generate(&GeneratorSpec::erdos_renyi(12, 0.5, 77)).unwrap();
        let limits = SolveLimits {
            max_labels: 50,
            time_budget: Duration::from_secs(300),
        };
        let r = labeling_solve(&g, &limits).unwrap();
        assert!(r.truncated);
        if let Some(p) = &r.path {
            assert!(crate::graph::is_elementary_st_path(&g, &p.nodes));
        }
    }

    #[test]
    fn bellman_ford_single_edge() {
        let g = graph(2, &[(0, 1, 0.5)], 0, 1);
        match bellman_ford_to_sink(&g, g.node_count()) {
            BellmanFordOutcome::Converged(d) => {
                assert_eq!(d.values(), &[0.5, 0.0]);
                assert_eq!(d.convergence_iteration(), Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bellman_ford_flags_cycle_reaching_sink() {
        // x <-> t cycle of total cost -0.5.
        let g = graph(2, &[(0, 1, -1.0), (1, 0, 0.5)], 0, 1);
        assert!(matches!(
            bellman_ford_to_sink(&g, g.node_count()),
            BellmanFordOutcome::NegativeCycle { .. }
        ));
    }

    #[test]
    fn bellman_ford_marks_unreachable_nodes_infinite() {
        // Node 2 cannot reach the sink.
        let g = graph(3, &[(0, 1, 1.0), (0, 2, 1.0)], 0, 1);
        match bellman_ford_to_sink(&g, g.node_count()) {
            BellmanFordOutcome::Converged(d) => {
                assert_eq!(d.value(0), 1.0);
                assert_eq!(d.value(1), 0.0);
                assert!(d.value(2).is_infinite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bellman_ford_agrees_with_brute_force_on_ncc_free_graphs() {
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 60 {
            seed += 1;
            let g = generate(&GeneratorSpec::erdos_renyi(9, 0.3, derive_seed(104, seed))).unwrap();
            if detect_negative_cycle(&g).is_some() {
                continue;
            }
            checked += 1;
            let bf = brute_force_solve(&g).unwrap();
            match bellman_ford_to_sink(&g, g.node_count()) {
                BellmanFordOutcome::Converged(d) => {
                    assert!(
                        (d.value(g.source()) - bf.optimum.unwrap()).abs() <= 1e-9,
                        "seed {seed}"
                    );
                }
                other => panic!("seed {seed}: unexpected {other:?}"),
            }
        }
    }
}
